"""Pure-numpy kernels.  Summation order mirrors the numba versions so both
backends return bit-identical results on the same input."""

import numpy as np


def _assign(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)  # first minimum -> lowest center index
    return labels, d2[np.arange(len(X)), labels]


def _means(X, labels, k):
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    C = np.empty((k, X.shape[1]))
    for j in range(X.shape[1]):
        C[:, j] = np.bincount(labels, weights=X[:, j], minlength=k)
    nz = counts > 0
    C[nz] /= counts[nz, None]
    return C, counts


def _sse(X, C, labels):
    d2 = ((X - C[labels]) ** 2).sum(axis=1)
    return float(np.cumsum(d2)[-1]) if len(d2) else 0.0


def _repair_empty(X, C, labels, k):
    counts = np.bincount(labels, minlength=k)
    for j in range(k):
        if counts[j] > 0:
            continue
        d2 = ((X - C[labels]) ** 2).sum(axis=1)
        d2 = np.where(counts[labels] > 1, d2, -1.0)
        p = int(np.argmax(d2))
        if d2[p] < 0:
            break
        counts[labels[p]] -= 1
        labels[p] = j
        counts[j] = 1
        C[j] = X[p]
    return labels


def lloyd(X, centers, max_iter, tol):
    """Run Lloyd iterations from ``centers``.

    Returns ``(labels, centers, wcss, n_iter)``.  Stops when the relative
    WCSS change drops below ``tol`` or after ``max_iter`` updates.  A
    cluster left empty is reseeded at the point farthest from its center
    (taken from a cluster with more than one member).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.array(centers, dtype=np.float64)
    k = C.shape[0]
    labels, _ = _assign(X, C)
    old = _sse(X, C, labels)
    it = 0
    for it in range(1, max_iter + 1):
        labels = _repair_empty(X, C, labels, k)
        C, _ = _means(X, labels, k)
        labels, _ = _assign(X, C)
        new = _sse(X, C, labels)
        if old == 0.0 or abs(old - new) < tol * old:
            old = new
            break
        old = new
    labels = _repair_empty(X, C, labels, k)
    C, _ = _means(X, labels, k)
    return labels.astype(np.int64), C, _sse(X, C, labels), it


def cooccurrence(labels):
    """Pair co-membership counts for an (n_sorts, n_cards) label array."""
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[1]
    counts = np.zeros((n, n), dtype=np.int64)
    for row in labels:
        counts += row[:, None] == row[None, :]
    np.fill_diagonal(counts, 0)
    return counts


def mantel_dots(X, iu, ju, yc, perms):
    """For each permutation p, sum over i<j of X[p[i], p[j]] * yc[ij]."""
    out = np.empty(len(perms))
    for b in range(len(perms)):
        p = perms[b]
        vals = X[p[iu], p[ju]] * yc
        out[b] = np.cumsum(vals)[-1]
    return out
