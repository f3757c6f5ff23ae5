"""Card x card similarity and distance matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import csvio, kernels
from .errors import CardSetMismatchError, EmptyResultsError, ParseError
from .text import canonicalize_label


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Percentage of participants grouping each pair of cards together.

    Stored as ``counts / total`` so values built from sorts stay exact;
    ``values`` gives the percentages.  Matrices parsed from text carry the
    percentages themselves with ``total == 100``.
    """

    cards: tuple
    counts: np.ndarray
    total: float

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        n = len(self.cards)
        if c.shape != (n, n):
            raise ValueError(f"matrix shape {c.shape} does not match {n} cards")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "cards", tuple(self.cards))

    @property
    def values(self):
        return 100.0 * self.counts / self.total

    def __eq__(self, other):
        if not isinstance(other, SimilarityMatrix):
            return NotImplemented
        return self.cards == other.cards and np.array_equal(self.values, other.values)

    def reorder(self, cards):
        idx = _axis_index(self.cards, cards)
        return SimilarityMatrix(tuple(cards), self.counts[np.ix_(idx, idx)], self.total)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    cards: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        n = len(self.cards)
        if v.shape != (n, n):
            raise ValueError(f"matrix shape {v.shape} does not match {n} cards")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "cards", tuple(self.cards))

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return self.cards == other.cards and np.array_equal(self.values, other.values)

    def reorder(self, cards):
        idx = _axis_index(self.cards, cards)
        return DistanceMatrix(tuple(cards), self.values[np.ix_(idx, idx)])


def _axis_index(current, wanted):
    pos = {c: i for i, c in enumerate(current)}
    if set(pos) != set(wanted) or len(wanted) != len(current):
        raise CardSetMismatchError("requested order is not a permutation of the matrix axis")
    return [pos[c] for c in wanted]


def build_similarity(results):
    """Co-categorization percentages over the complete sorts of ``results``."""
    sorts = results.complete_sorts()
    if not sorts:
        raise EmptyResultsError("no complete sorts to build a similarity matrix from")
    cards = results.config.card_ids
    labels = np.empty((len(sorts), len(cards)), dtype=np.int64)
    for r, s in enumerate(sorts):
        names = {}
        for j, cid in enumerate(cards):
            labels[r, j] = names.setdefault(s.assignments[cid], len(names))
    counts = kernels.cooccurrence(labels)
    return SimilarityMatrix(tuple(cards), counts, len(sorts))


def clustering_to_matrix(clustering, cards):
    """0/100 matrix of a single clustering over the axis ``cards``."""
    cards = tuple(cards)
    if sorted(clustering.card_ids) != sorted(cards):
        raise CardSetMismatchError("clustering does not cover exactly the given cards")
    labels = np.asarray([clustering.labels_for(cards)], dtype=np.int64)
    return SimilarityMatrix(cards, kernels.cooccurrence(labels), 1)


def complement(matrix):
    """Distance matrix ``100 - similarity`` with a zero diagonal."""
    d = 100.0 - matrix.values
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(matrix.cards, d)


def to_similarity(dist):
    """Inverse of :func:`complement` on the off-diagonal entries."""
    s = 100.0 - dist.values
    np.fill_diagonal(s, 0.0)
    return SimilarityMatrix(dist.cards, s, 100)


# --------------------------------------------------------------------------
# CSV I/O

def format_value(v):
    """Fixed two-decimal rendering with trailing zeros dropped (``62.5``, ``95``)."""
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def serialize_matrix(matrix, config):
    """Labeled square CSV: header row and first column carry card labels."""
    labels = [config.label_of(c) for c in matrix.cards]
    vals = matrix.values
    rows = [[""] + labels]
    for i, lab in enumerate(labels):
        rows.append([lab] + [format_value(v) for v in vals[i]])
    return csvio.write_rows(rows)


def parse_matrix(text, config):
    """Strict parse of a labeled matrix CSV into a :class:`SimilarityMatrix`.

    The axis follows the row order of the file.  Use
    :func:`cardsim.validate.validate_matrix_output` for tolerant parsing of
    model output.
    """
    rows = [r for r in csvio.read_rows(text) if r]
    if not rows:
        raise ParseError("empty matrix")
    header = rows[0][1:]
    index = config.canonical_index()

    def resolve(label, where):
        cid = index.get(canonicalize_label(label))
        if cid is None:
            from .errors import UnknownCardError
            raise UnknownCardError(f"unknown card {label!r}", location=where)
        return cid

    col_ids = [resolve(h, f"header column {j + 2}") for j, h in enumerate(header)]
    row_ids = []
    body = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header) + 1:
            raise ParseError(f"expected {len(header) + 1} fields", location=f"row {i + 2}")
        row_ids.append(resolve(row[0], f"row {i + 2}"))
        try:
            body[i] = [float(x) for x in row[1:]]
        except ValueError:
            raise ParseError("non-numeric matrix entry", location=f"row {i + 2}") from None
    if sorted(row_ids) != sorted(col_ids) or len(set(row_ids)) != len(row_ids):
        raise ParseError("row and column labels do not cover the same cards")
    if sorted(row_ids) != sorted(config.card_ids):
        raise CardSetMismatchError("matrix axis does not cover the study cards")
    order = [col_ids.index(c) for c in row_ids]
    return SimilarityMatrix(tuple(row_ids), body[:, order], 100)
