"""Exception hierarchy shared across the package."""


class CardSimError(Exception):
    """Base class for all cardsim errors."""


class ConfigError(CardSimError):
    """A study config, manifest or endpoint definition is unusable.

    ``location`` is a human-readable pointer (``line 4``, ``cards[2]``...).
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class DuplicateCardError(ConfigError):
    pass


class NoCardsError(ConfigError):
    pass


class ParseError(CardSimError):
    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class UnknownCardError(ParseError):
    pass


class DuplicateAssignmentError(ParseError):
    pass


class MalformedCSVError(ParseError):
    pass


class EmptyResultsError(CardSimError):
    """No complete participant sorts are available."""


class CardSetMismatchError(CardSimError):
    """Two objects that must cover the same cards do not."""


class UndefinedCorrelationError(CardSimError):
    """A correlation is undefined because one input has zero variance."""


class DegenerateStructureError(CardSimError):
    """Input carries no cluster structure (e.g. all distances zero)."""

    def __init__(self, message, no_knee=True):
        self.no_knee = no_knee
        super().__init__(message)


class ScreeningError(CardSimError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("study failed screening: " + ", ".join(self.violations))
