"""MDS embedding, K-means and knee-based selection of K."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline, make_smoothing_spline

from . import kernels
from .errors import DegenerateStructureError
from .model import Clustering

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterConfig:
    dims: Optional[int] = None  # None: every axis with a positive eigenvalue
    k_min: int = 2
    k_max: int = 15
    restarts: int = 10
    max_iter: int = 300
    tol: float = 1e-6

    def k_range(self, n):
        return self.k_min, min(n - 1, self.k_max)


@dataclass(frozen=True, eq=False)
class Embedding:
    cards: tuple
    coords: np.ndarray
    eigenvalues: np.ndarray = field(default=None, repr=False)

    @property
    def d(self):
        return self.coords.shape[1]


@dataclass(frozen=True)
class WcssCurve:
    ks: tuple
    wcss: tuple

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("ks must be strictly ascending")
        if len(self.ks) != len(self.wcss):
            raise ValueError("ks and wcss differ in length")
        if any(not np.isfinite(w) or w < 0 for w in self.wcss):
            raise ValueError("wcss values must be finite and non-negative")


@dataclass(frozen=True)
class Knee:
    k: int
    no_knee: bool = False
    method: str = "spline"  # "spline" | "interpolating-spline" | "second-difference"
    curvature: float = 0.0  # signed curvature at the grid argmax
    peak: Optional[float] = None  # K-axis position of the grid argmax


@dataclass(frozen=True)
class LabeledClustering:
    clustering: Clustering
    k: int
    wcss_at_k: float
    curve: Optional[WcssCurve] = None
    knee: Optional[Knee] = None


# --------------------------------------------------------------------------
# MDS

def mds_embed(dist, d=None):
    """Classical (Torgerson) MDS of a :class:`DistanceMatrix`.

    ``d=None`` keeps ``n - 1`` axes, i.e. the full Euclidean part of the
    distances.  Axes whose eigenvalue is not positive are zero-filled.  Each axis is
    sign-fixed so that its largest-magnitude coordinate is positive.
    """
    D = np.asarray(dist.values, dtype=np.float64)
    n = D.shape[0]
    if d is None:
        d = max(n - 1, 1)
    if not np.allclose(D, D.T, rtol=0, atol=1e-9):
        raise ValueError("distance matrix is not symmetric")
    if not 1 <= d <= max(n - 1, 1):
        raise ValueError(f"dimensionality {d} out of range [1, {n - 1}]")
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D ** 2) @ J
    B = (B + B.T) / 2
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:d]
    evals, evecs = evals[order], evecs[:, order]
    scale = max(abs(evals[0]), 1.0) if len(evals) else 1.0
    coords = np.zeros((n, d))
    for a in range(d):
        if evals[a] > 1e-10 * scale:
            coords[:, a] = evecs[:, a] * np.sqrt(evals[a])
    for a in range(d):
        col = coords[:, a]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            coords[:, a] = -col
    coords[np.abs(coords) < 1e-12 * max(1.0, np.abs(coords).max(initial=0))] = 0.0
    return Embedding(tuple(dist.cards), coords, evals)


# --------------------------------------------------------------------------
# K-means

def _plusplus(X, k, rng):
    n = len(X)
    first = int(rng.integers(n))
    centers = [X[first]]
    chosen = [first]
    closest = ((X - X[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest)) if len(rest) else int(rng.integers(n))
        chosen.append(idx)
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _kmeans_raw(X, k, rng, restarts, max_iter, tol):
    best = None
    for _ in range(restarts):
        labels, _, wcss, _ = kernels.lloyd(X, _plusplus(X, k, rng), max_iter, tol)
        if best is None or wcss < best[1]:
            best = (labels, wcss)
    return best


def kmeans(embedding, k, seed, restarts=10, max_iter=300, tol=1e-6):
    """Best-of-``restarts`` K-means with k-means++ seeding.

    Deterministic for a given seed.  Clusters are named ``cluster-1`` ...
    in order of first appearance along the card axis; empty clusters (only
    possible with duplicate points) are dropped, so ``k`` on the result is
    the number of non-empty clusters.
    """
    X = np.asarray(embedding.coords, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    rng = np.random.default_rng(seed)
    labels, wcss = _kmeans_raw(X, k, rng, restarts, max_iter, tol)
    clustering = Clustering.from_labels(embedding.cards, labels)
    return LabeledClustering(clustering, clustering.n_categories(), wcss)


def _k_seed(seed, k, attempt=0):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(k), int(attempt)])


def wcss_curve(embedding, k_min, k_max, seed, restarts=10, max_iter=300, tol=1e-6,
               max_retries=3):
    """WCSS for every K in ``[k_min, k_max]``.

    Each K gets its own seed derived from ``(seed, K)``.  When a K scores
    worse than K-1 it is rerun with twice the restarts (fresh seeds), up to
    ``max_retries`` times.
    """
    X = np.asarray(embedding.coords, dtype=np.float64)
    n = len(X)
    if not 1 <= k_min < k_max <= n:
        raise ValueError(f"k range [{k_min}, {k_max}] invalid for {n} points")
    ks = list(range(k_min, k_max + 1))
    out = []
    for k in ks:
        rng = np.random.default_rng(_k_seed(seed, k))
        _, w = _kmeans_raw(X, k, rng, restarts, max_iter, tol)
        attempt, r = 0, restarts
        while out and w > out[-1] and attempt < max_retries:
            attempt += 1
            r *= 2
            rng = np.random.default_rng(_k_seed(seed, k, attempt))
            _, w2 = _kmeans_raw(X, k, rng, r, max_iter, tol)
            w = min(w, w2)
        if out and w > out[-1]:
            logger.warning("WCSS still increases at K=%d after %d retries", k, attempt)
        out.append(w)
    return WcssCurve(tuple(ks), tuple(out))


# --------------------------------------------------------------------------
# knee detection

_FLAT = 1e-6
_GRID = 4001


def _second_difference_knee(ks, y):
    if len(ks) < 3:
        return Knee(int(ks[0]), no_knee=True, method="second-difference")
    dd = y[:-2] - 2 * y[1:-1] + y[2:]
    i = int(np.argmax(np.abs(dd)))
    no_knee = abs(dd[i]) < _FLAT
    return Knee(int(ks[i + 1]), no_knee=no_knee, method="second-difference",
                curvature=float(dd[i]))


def knee_point(curve):
    """Select K at the maximum curvature of the normalized WCSS curve.

    Both axes are scaled to [0, 1] and a cubic smoothing spline (smoothing
    chosen by GCV) is fitted.  The curvature ``f'' / (1 + f'^2) ** 1.5`` is
    evaluated on a dense grid between the second and the second-to-last K.
    Smoothing spreads the curvature of a sharp elbow onto its flat side, so
    the selected K is the last candidate at or before the grid argmax of
    ``|curvature|``.  A curve with (near) zero curvature everywhere returns
    the smallest interior K flagged ``no_knee``.

    Curves with fewer than four points fall back to the discrete second
    difference; exactly four points use an interpolating spline since the
    GCV fit needs five.
    """
    ks = np.asarray(curve.ks, dtype=np.float64)
    w = np.asarray(curve.wcss, dtype=np.float64)
    if len(ks) < 2:
        raise ValueError("knee detection needs at least 2 curve points")
    span = w.max() - w.min()
    if span <= 0:
        return Knee(int(ks[1] if len(ks) > 2 else ks[0]), no_knee=True,
                    method="second-difference" if len(ks) < 4 else "spline")
    x = (ks - ks[0]) / (ks[-1] - ks[0])
    y = (w - w.min()) / span
    if len(ks) < 4:
        return _second_difference_knee(curve.ks, y)
    if len(ks) == 4:
        spline, method = CubicSpline(x, y, bc_type="natural"), "interpolating-spline"
    else:
        spline, method = make_smoothing_spline(x, y), "spline"
    grid = np.linspace(x[1], x[-2], _GRID)
    kappa = spline.derivative(2)(grid) / (1.0 + spline.derivative(1)(grid) ** 2) ** 1.5
    interior = ks[1:-1]
    g = int(np.argmax(np.abs(kappa)))
    if abs(kappa[g]) < _FLAT:
        return Knee(int(interior[0]), no_knee=True, method=method, curvature=float(kappa[g]))
    peak = grid[g] * (ks[-1] - ks[0]) + ks[0]
    below = interior[interior <= peak + 1e-9]
    k = below[-1] if len(below) else interior[0]
    return Knee(int(k), no_knee=False, method=method, curvature=float(kappa[g]),
                peak=float(peak))


# --------------------------------------------------------------------------
# composition

def cluster_cards(dist, seed, config=None):
    """MDS -> WCSS curve -> knee -> final K-means at the selected K."""
    config = config or ClusterConfig()
    n = len(dist.cards)
    if n < 4:
        raise ValueError("cluster_cards needs at least 4 cards")
    if not np.any(np.asarray(dist.values) > 0):
        raise DegenerateStructureError("all distances are zero; no cluster structure")
    emb = mds_embed(dist, None if config.dims is None else min(config.dims, n - 1))
    k_lo, k_hi = config.k_range(n)
    if k_hi <= k_lo:
        k_hi = min(n, k_lo + 1)
    curve = wcss_curve(emb, k_lo, k_hi, seed, config.restarts, config.max_iter, config.tol)
    knee = knee_point(curve)
    rng_seed = _k_seed(seed, knee.k)
    lab = kmeans(emb, knee.k, rng_seed, config.restarts, config.max_iter, config.tol)
    return LabeledClustering(lab.clustering, lab.k, lab.wcss_at_k, curve, knee)
