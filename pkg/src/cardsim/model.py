"""Domain types, study config parsing, raw-results CSV I/O and screening."""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Optional

from . import csvio
from .errors import (
    ConfigError,
    DuplicateAssignmentError,
    DuplicateCardError,
    EmptyResultsError,
    NoCardsError,
    ParseError,
    UnknownCardError,
)
from .text import canonicalize_label

RAW_HEADER = ("respondent", "category", "card")

MIN_PARTICIPANTS = 10
MIN_CARDS = 10


@dataclass(frozen=True)
class Card:
    id: int
    label: str


@dataclass(frozen=True)
class StudyConfig:
    study_id: str
    cards: tuple
    number_of_participants: int
    welcome_message: Optional[str] = None
    instructions: Optional[str] = None
    demographics: Optional[str] = None
    language_tag: str = "en"

    def __post_init__(self):
        if len(self.cards) == 0:
            raise NoCardsError("study has no cards", location="cards")
        if len(self.cards) < 2:
            raise ConfigError("study needs at least 2 cards", location="cards")
        seen = {}
        for pos, card in enumerate(self.cards):
            if not card.label.strip():
                raise ConfigError("empty card label", location=f"cards[{pos}]")
            key = canonicalize_label(card.label)
            if key in seen:
                raise DuplicateCardError(
                    f"duplicate card {card.label!r} (same as cards[{seen[key]}])",
                    location=f"cards[{pos}]",
                )
            seen[key] = pos
        if len({c.id for c in self.cards}) != len(self.cards):
            raise ConfigError("card ids are not unique", location="cards")
        if self.number_of_participants < 1:
            raise ConfigError("number_of_participants must be >= 1",
                              location="number_of_participants")

    @classmethod
    def from_labels(cls, study_id, labels, number_of_participants, **context):
        cards = tuple(Card(i, lab) for i, lab in enumerate(labels))
        return cls(study_id, cards, number_of_participants, **context)

    @property
    def card_ids(self):
        return [c.id for c in self.cards]

    @property
    def labels(self):
        return [c.label for c in self.cards]

    def label_of(self, card_id):
        return self._by_id()[card_id].label

    def _by_id(self):
        # cached on the instance; dataclass is frozen so bypass __setattr__
        try:
            return self.__dict__["_by_id_cache"]
        except KeyError:
            cache = {c.id: c for c in self.cards}
            object.__setattr__(self, "_by_id_cache", cache)
            return cache

    def canonical_index(self):
        """Map canonical label -> card id."""
        try:
            return self.__dict__["_canon_cache"]
        except KeyError:
            cache = {canonicalize_label(c.label): c.id for c in self.cards}
            object.__setattr__(self, "_canon_cache", cache)
            return cache


@dataclass(frozen=True)
class ParticipantSort:
    respondent_id: str
    assignments: dict  # card id -> category name, in row order
    complete: bool

    @classmethod
    def build(cls, respondent_id, assignments, config):
        complete = set(assignments) == set(config.card_ids)
        return cls(str(respondent_id), dict(assignments), complete)

    def n_categories(self):
        return len(set(self.assignments.values()))


@dataclass(frozen=True)
class Provenance:
    kind: str = "real"  # "real" | "simulated"
    variant: Optional[str] = None
    model_id: Optional[str] = None
    trial_index: Optional[int] = None

    @classmethod
    def simulated(cls, variant, model_id, trial_index):
        return cls("simulated", variant, model_id, trial_index)


@dataclass(frozen=True)
class StudyResults:
    config: StudyConfig
    sorts: tuple
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        valid = set(self.config.card_ids)
        for s in self.sorts:
            extra = set(s.assignments) - valid
            if extra:
                raise UnknownCardError(
                    f"respondent {s.respondent_id} references unknown card ids {sorted(extra)}")

    def complete_sorts(self):
        return [s for s in self.sorts if s.complete]


class Clustering:
    """A named partition of cards.

    ``clusters`` maps category name -> tuple of card ids, both in the order
    they were first seen.  Construction does not enforce the partition
    invariants so that partially invalid LLM output can still be inspected;
    call :meth:`check` for that.
    """

    __slots__ = ("clusters",)

    def __init__(self, clusters):
        self.clusters = {name: tuple(ids) for name, ids in clusters.items()}

    def __repr__(self):
        return f"Clustering({self.clusters!r})"

    def __eq__(self, other):
        if not isinstance(other, Clustering):
            return NotImplemented
        return self.clusters == other.clusters

    @classmethod
    def from_labels(cls, card_ids, labels, prefix="cluster-"):
        """Build from a per-card integer label vector; names follow label order."""
        order = {}
        for lab in labels:
            order.setdefault(int(lab), len(order))
        groups = {}
        for cid, lab in zip(card_ids, labels):
            groups.setdefault(f"{prefix}{order[int(lab)] + 1}", []).append(cid)
        return cls(groups)

    @property
    def card_ids(self):
        return [cid for ids in self.clusters.values() for cid in ids]

    def card_set(self):
        return frozenset(self.card_ids)

    def n_categories(self):
        return sum(1 for ids in self.clusters.values() if ids)

    def partition(self):
        """Name-free view: frozenset of frozensets of card ids."""
        return frozenset(frozenset(ids) for ids in self.clusters.values() if ids)

    def same_partition(self, other):
        return self.partition() == other.partition()

    def labels_for(self, card_order):
        """Integer category index per card in ``card_order``."""
        index = {}
        for k, ids in enumerate(c for c in self.clusters.values() if c):
            for cid in ids:
                index[cid] = k
        try:
            return [index[cid] for cid in card_order]
        except KeyError as exc:
            from .errors import CardSetMismatchError
            raise CardSetMismatchError(f"card {exc.args[0]} missing from clustering") from None

    def check(self, card_ids):
        """Raise ValueError if this is not a valid clustering of ``card_ids``."""
        seen = set()
        for name, ids in self.clusters.items():
            if not name.strip():
                raise ValueError("category with empty name")
            for cid in ids:
                if cid in seen:
                    raise ValueError(f"card {cid} in more than one category")
                seen.add(cid)
        if seen != set(card_ids):
            raise ValueError("clustering does not cover the study card set")
        if self.n_categories() < 2:
            raise ValueError("fewer than 2 non-empty categories")


# --------------------------------------------------------------------------
# study config

_CONFIG_FIELDS = {"study_id", "cards", "number_of_participants", "welcome_message",
                  "instructions", "demographics", "language_tag"}


def parse_study_config(source):
    """Parse a JSON study config document into a :class:`StudyConfig`.

    Schema::

        {"study_id": "s1", "cards": ["Cat", "Dog"], "number_of_participants": 12,
         "welcome_message": null, "instructions": null, "demographics": null,
         "language_tag": "en"}
    """
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config: {exc.msg}",
                          location=f"line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", location="line 1")
    unknown = set(doc) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", location=sorted(unknown)[0])
    for name in ("study_id", "cards", "number_of_participants"):
        if name not in doc:
            raise ConfigError(f"missing required field {name!r}", location=name)
    cards = doc["cards"]
    if not isinstance(cards, list):
        raise ConfigError("cards must be a list of labels", location="cards")
    for pos, lab in enumerate(cards):
        if not isinstance(lab, str):
            raise ConfigError("card label must be a string", location=f"cards[{pos}]")
    n = doc["number_of_participants"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError("number_of_participants must be an integer",
                          location="number_of_participants")
    for name in ("welcome_message", "instructions", "demographics", "language_tag"):
        if doc.get(name) is not None and not isinstance(doc[name], str):
            raise ConfigError(f"{name} must be a string or null", location=name)
    return StudyConfig.from_labels(
        str(doc["study_id"]), cards, n,
        welcome_message=doc.get("welcome_message"),
        instructions=doc.get("instructions"),
        demographics=doc.get("demographics"),
        language_tag=doc.get("language_tag") or "en",
    )


def serialize_study_config(config):
    doc = {
        "study_id": config.study_id,
        "cards": config.labels,
        "number_of_participants": config.number_of_participants,
        "welcome_message": config.welcome_message,
        "instructions": config.instructions,
        "demographics": config.demographics,
        "language_tag": config.language_tag,
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# --------------------------------------------------------------------------
# raw results CSV

def parse_raw_results(text, config, provenance=None):
    """Parse ``respondent,category,card`` rows into :class:`StudyResults`.

    Labels are resolved by canonical match against the config.  Unknown
    labels and a card assigned twice by the same respondent are errors.
    """
    rows = csvio.read_rows(text)
    if not rows or tuple(h.strip() for h in rows[0]) != RAW_HEADER:
        raise ParseError("expected header 'respondent,category,card'", location="row 1")
    index = config.canonical_index()
    grouped = {}
    for rownum, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", location=f"row {rownum}")
        rid, category, label = row
        cid = index.get(canonicalize_label(label))
        if cid is None:
            raise UnknownCardError(f"unknown card {label!r}", location=f"row {rownum}")
        assignments = grouped.setdefault(rid, {})
        if cid in assignments:
            raise DuplicateAssignmentError(
                f"respondent {rid} assigns {label!r} twice", location=f"row {rownum}")
        assignments[cid] = category
    sorts = tuple(ParticipantSort.build(rid, a, config) for rid, a in grouped.items())
    return StudyResults(config, sorts, provenance or Provenance())


def serialize_raw_results(results):
    rows = [list(RAW_HEADER)]
    for s in results.sorts:
        for cid, category in s.assignments.items():
            rows.append([s.respondent_id, category, results.config.label_of(cid)])
    return csvio.write_rows(rows)


# --------------------------------------------------------------------------
# clustering CSV

CLUSTERING_HEADER = ("categoryName", "cardName")


def parse_clustering(text, config):
    """Strictly parse ``categoryName,cardName`` rows into a :class:`Clustering`.

    For lenient parsing of model output use the validate module instead.
    """
    rows = csvio.read_rows(text)
    if not rows or tuple(h.strip() for h in rows[0]) != CLUSTERING_HEADER:
        raise ParseError("expected header 'categoryName,cardName'", location="row 1")
    index = config.canonical_index()
    groups, seen = {}, set()
    for rownum, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", location=f"row {rownum}")
        category, label = row
        cid = index.get(canonicalize_label(label))
        if cid is None:
            raise UnknownCardError(f"unknown card {label!r}", location=f"row {rownum}")
        if cid in seen:
            raise DuplicateAssignmentError(f"card {label!r} appears twice",
                                           location=f"row {rownum}")
        seen.add(cid)
        groups.setdefault(category, []).append(cid)
    return Clustering(groups)


def serialize_clustering(clustering, config):
    rows = [list(CLUSTERING_HEADER)]
    for name, ids in clustering.clusters.items():
        rows.extend([name, config.label_of(cid)] for cid in ids)
    return csvio.write_rows(rows)


def filter_complete(results):
    kept = tuple(s for s in results.sorts if s.complete)
    if not kept:
        raise EmptyResultsError("no complete participant sorts")
    return StudyResults(results.config, kept, results.provenance)


@dataclass(frozen=True)
class ScreeningVerdict:
    violations: tuple = ()

    @property
    def passed(self):
        return not self.violations


def screen_study(results):
    """Check the dataset inclusion criteria; collects every violation."""
    violations = []
    n_complete = len(results.complete_sorts())
    if n_complete < MIN_PARTICIPANTS:
        violations.append("min-participants")
    labels = [canonicalize_label(c.label) for c in results.config.cards]
    if len(set(labels)) < MIN_CARDS:
        violations.append("min-cards")
    if len(set(labels)) != len(labels):
        # unreachable for configs built through StudyConfig, kept for safety
        violations.append("duplicate-cards")
    return ScreeningVerdict(tuple(violations))


@dataclass(frozen=True)
class StudySummary:
    n_cards: int
    n_complete: int
    mean_categories: float
    sd_categories: float


def summarize_study(results):
    """Card count, complete-participant count and categories per participant.

    The SD is the sample standard deviation (n - 1); a single participant
    gives 0.
    """
    complete = results.complete_sorts()
    if not complete:
        raise EmptyResultsError("no complete participant sorts")
    counts = [s.n_categories() for s in complete]
    sd = statistics.stdev(counts) if len(counts) > 1 else 0.0
    return StudySummary(len(results.config.cards), len(complete),
                        statistics.fmean(counts), sd)
