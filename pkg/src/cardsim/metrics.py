"""Agreement between clusterings (NMI, ARI, edit distance) and matrices (Mantel)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .errors import CardSetMismatchError, UndefinedCorrelationError


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # |A| x |B|

    @property
    def rows(self):
        return self.counts.sum(axis=1)

    @property
    def cols(self):
        return self.counts.sum(axis=0)

    @property
    def n(self):
        return int(self.counts.sum())


def contingency(a, b):
    """Co-membership counts between the non-empty categories of ``a`` and ``b``."""
    if a.card_set() != b.card_set() or len(a.card_ids) != len(b.card_ids):
        raise CardSetMismatchError("clusterings do not partition the same card set")
    order = sorted(a.card_set())
    la = np.asarray(a.labels_for(order))
    lb = np.asarray(b.labels_for(order))
    table = np.zeros((la.max() + 1, lb.max() + 1), dtype=np.int64)
    np.add.at(table, (la, lb), 1)
    return ContingencyTable(table)


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(a, b):
    """Normalized mutual information, arithmetic-mean normalization, natural log."""
    t = contingency(a, b)
    if a.same_partition(b):
        return 1.0  # exact, avoids rounding just below 1
    n = t.n
    ha, hb = _entropy(t.rows, n), _entropy(t.cols, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    nz = t.counts > 0
    c = t.counts[nz].astype(np.float64)
    outer = np.outer(t.rows, t.cols)[nz].astype(np.float64)
    mi = float((c / n * np.log(c * n / outer)).sum())
    value = mi / ((ha + hb) / 2.0)
    return min(max(value, 0.0), 1.0)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(a, b):
    """Adjusted Rand index from pair counts of the contingency table."""
    t = contingency(a, b)
    if t.n < 2:
        return 1.0  # no pairs to disagree on
    index = _comb2(t.counts).sum()
    sa, sb = _comb2(t.rows).sum(), _comb2(t.cols).sum()
    expected = sa * sb / _comb2(t.n)
    max_index = (sa + sb) / 2.0
    if max_index == expected:
        return 1.0 if a.same_partition(b) else 0.0
    return float((index - expected) / (max_index - expected))


def edit_distance(a, b):
    """Minimum number of cards to move to turn ``a`` into ``b``.

    Equals ``n`` minus the weight of a maximum-weight matching between the
    categories of both clusterings, with overlap sizes as weights.
    """
    t = contingency(a, b)
    rows, cols = linear_sum_assignment(t.counts, maximize=True)
    return int(t.n - t.counts[rows, cols].sum())


def compare_category_counts(a, b):
    na, nb = a.n_categories(), b.n_categories()
    return na, nb, na - nb


# --------------------------------------------------------------------------
# Mantel

@dataclass(frozen=True)
class MantelResult:
    r: float
    p: float
    permutations: int


def mantel(d1, d2, permutations=9999, seed=0):
    """Two-sided Mantel test with Pearson correlation of the upper triangles.

    Rows and columns of ``d1`` are permuted jointly; the p-value is
    ``(#{|r_perm| >= |r_obs|} + 1) / (permutations + 1)``.
    """
    if tuple(d1.cards) != tuple(d2.cards):
        if sorted(d1.cards) != sorted(d2.cards):
            raise CardSetMismatchError("distance matrices have different card axes")
        d2 = d2.reorder(d1.cards)
    n = len(d1.cards)
    if n < 4:
        raise ValueError("Mantel test needs at least 4 cards")
    if permutations < 99:
        raise ValueError("use at least 99 permutations")
    X = np.asarray(d1.values, dtype=np.float64)
    Y = np.asarray(d2.values, dtype=np.float64)
    iu, ju = np.triu_indices(n, k=1)
    x = X[iu, ju]
    y = Y[iu, ju]
    xc = x - x.mean()
    yc = y - y.mean()
    nx, ny = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if nx == 0 or ny == 0:
        raise UndefinedCorrelationError("a distance matrix has zero variance off the diagonal")
    denom = nx * ny
    r_obs = float(np.clip(kernels.mantel_dots(X, iu, ju, yc, np.arange(n)[None, :])[0] / denom,
                          -1.0, 1.0))
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(np.arange(n), (permutations, 1)), axis=1)
    r_perm = kernels.mantel_dots(X, iu, ju, yc, perms) / denom
    hits = int(np.count_nonzero(np.abs(r_perm) >= abs(r_obs) - 1e-12))
    return MantelResult(r_obs, (hits + 1) / (permutations + 1), permutations)


# --------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class AgreementReport:
    nmi: float
    ari: float
    edit_distance: int
    n_categories_a: int
    n_categories_b: int
    mantel_r: Optional[float] = None
    mantel_p: Optional[float] = None

    FIELDS = ("nmi", "ari", "edit_distance", "n_categories_a", "n_categories_b",
              "mantel_r", "mantel_p")

    def as_record(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    def as_row(self):
        """Fixed-order list of strings for CSV aggregation."""
        return ["" if v is None else (repr(v) if isinstance(v, float) else str(v))
                for v in self.as_record().values()]

    @classmethod
    def from_record(cls, rec):
        return cls(**{k: rec.get(k) for k in cls.FIELDS})


def compare(a, b, dist_a=None, dist_b=None, permutations=9999, seed=0):
    """Full agreement report; Mantel only when both distance matrices are given."""
    r = p = None
    if dist_a is not None and dist_b is not None:
        try:
            m = mantel(dist_a, dist_b, permutations, seed)
            r, p = m.r, m.p
        except UndefinedCorrelationError:
            pass
    na, nb, _ = compare_category_counts(a, b)
    return AgreementReport(nmi(a, b), ari(a, b), edit_distance(a, b), na, nb, r, p)
