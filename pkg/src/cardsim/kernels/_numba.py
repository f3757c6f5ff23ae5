"""numba-compiled kernels; same contracts as :mod:`cardsim.kernels._numpy`."""

import numpy as np
from numba import njit


@njit(cache=True)
def _assign(X, C, labels):
    n, d = X.shape
    k = C.shape[0]
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - C[j, t]
                s += diff * diff
            if s < best:
                best = s
                arg = j
        labels[i] = arg


@njit(cache=True)
def _means(X, labels, k):
    n, d = X.shape
    C = np.zeros((k, d))
    counts = np.zeros(k)
    for i in range(n):
        counts[labels[i]] += 1.0
        for t in range(d):
            C[labels[i], t] += X[i, t]
    for j in range(k):
        if counts[j] > 0:
            for t in range(d):
                C[j, t] /= counts[j]
    return C


@njit(cache=True)
def _sse(X, C, labels):
    n, d = X.shape
    total = 0.0
    for i in range(n):
        s = 0.0
        for t in range(d):
            diff = X[i, t] - C[labels[i], t]
            s += diff * diff
        total += s
    return total


@njit(cache=True)
def _repair_empty(X, C, labels, k):
    n, d = X.shape
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        counts[labels[i]] += 1
    for j in range(k):
        if counts[j] > 0:
            continue
        best = -1.0
        p = -1
        for i in range(n):
            if counts[labels[i]] <= 1:
                continue
            s = 0.0
            for t in range(d):
                diff = X[i, t] - C[labels[i], t]
                s += diff * diff
            if s > best:
                best = s
                p = i
        if p < 0:
            break
        counts[labels[p]] -= 1
        labels[p] = j
        counts[j] = 1
        for t in range(d):
            C[j, t] = X[p, t]


@njit(cache=True)
def _lloyd(X, C, max_iter, tol):
    n = X.shape[0]
    k = C.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    _assign(X, C, labels)
    old = _sse(X, C, labels)
    it = 0
    for step in range(1, max_iter + 1):
        it = step
        _repair_empty(X, C, labels, k)
        C = _means(X, labels, k)
        _assign(X, C, labels)
        new = _sse(X, C, labels)
        if old == 0.0 or abs(old - new) < tol * old:
            old = new
            break
        old = new
    _repair_empty(X, C, labels, k)
    C = _means(X, labels, k)
    return labels, C, _sse(X, C, labels), it


def lloyd(X, centers, max_iter, tol):
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.array(centers, dtype=np.float64)
    labels, C, wcss, it = _lloyd(X, C, int(max_iter), float(tol))
    return labels, C, float(wcss), int(it)


@njit(cache=True)
def _cooccurrence(labels):
    s, n = labels.shape
    counts = np.zeros((n, n), dtype=np.int64)
    for r in range(s):
        for i in range(n):
            for j in range(i + 1, n):
                if labels[r, i] == labels[r, j]:
                    counts[i, j] += 1
                    counts[j, i] += 1
    return counts


def cooccurrence(labels):
    return _cooccurrence(np.ascontiguousarray(labels, dtype=np.int64))


@njit(cache=True)
def _mantel_dots(X, iu, ju, yc, perms):
    nperm = perms.shape[0]
    m = iu.shape[0]
    out = np.empty(nperm)
    for b in range(nperm):
        s = 0.0
        for t in range(m):
            s += X[perms[b, iu[t]], perms[b, ju[t]]] * yc[t]
        out[b] = s
    return out


def mantel_dots(X, iu, ju, yc, perms):
    return _mantel_dots(np.ascontiguousarray(X, dtype=np.float64),
                        np.ascontiguousarray(iu, dtype=np.int64),
                        np.ascontiguousarray(ju, dtype=np.int64),
                        np.ascontiguousarray(yc, dtype=np.float64),
                        np.ascontiguousarray(perms, dtype=np.int64))
