"""Hot numeric kernels for the latent-graph planner.

Planning spends most of its time in three inner loops: scanning fringe
candidates against the visited set, resolving pairwise conflicts among new
leaves, and matching queries against the observed-transition table. Each
kernel has a numba @njit implementation and a pure-numpy fallback with the
same semantics.

Backend selection: the environment variable PPGS_NUMBA picks the path at
import time. "0"/"false"/"off" forces the numpy fallback; anything else
(default "auto") uses numba when it imports cleanly. `backend()` reports
the active choice; benchmarks/bench_kernels.py times one against the other.

All distances are compared in squared form, so callers pass squared
thresholds and no sqrt is taken on either path.
"""
from __future__ import annotations

import os

import numpy as np


def _want_numba() -> bool:
    flag = os.environ.get("PPGS_NUMBA", "auto").strip().lower()
    return flag not in ("0", "false", "off", "no")


# -- pure numpy fallback -----------------------------------------------------


def _sqdists(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    # Gram-matrix expansion; clamp tiny negatives from cancellation.
    qq = (queries * queries).sum(axis=1)[:, None]
    rr = (refs * refs).sum(axis=1)[None, :]
    d2 = qq + rr - 2.0 * (queries @ refs.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _np_min_sqdist_to_set(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    if refs.shape[0] == 0:
        return np.full(queries.shape[0], np.inf)
    return _sqdists(queries, refs).min(axis=1)


def _np_conflict_keep_mask(points: np.ndarray, sq_thresh: float) -> np.ndarray:
    n = points.shape[0]
    keep = np.ones(n, dtype=np.bool_)
    if n < 2:
        return keep
    adj = _sqdists(points, points) < sq_thresh
    np.fill_diagonal(adj, False)
    degree = adj.sum(axis=1).astype(np.int64)
    while True:
        i = int(np.argmax(degree))  # argmax takes the lowest index on ties
        if degree[i] == 0:
            return keep
        degree -= adj[i]
        degree[i] = 0
        adj[i, :] = False
        adj[:, i] = False
        keep[i] = False


def _np_table_first_match(table_z, table_a, queries, query_a, sq_thresh):
    out = np.full(queries.shape[0], -1, dtype=np.int64)
    if table_z.shape[0] == 0:
        return out
    for qi in range(queries.shape[0]):
        diff = table_z - queries[qi]
        d2 = (diff * diff).sum(axis=1)
        hits = np.nonzero((table_a == query_a[qi]) & (d2 < sq_thresh))[0]
        if hits.size:
            out[qi] = int(hits[0])
    return out


# -- numba kernels ------------------------------------------------------------

_HAVE_NUMBA = False
if _want_numba():
    try:
        from numba import njit

        @njit(cache=True)
        def _nb_min_sqdist_to_set(queries, refs):
            nq, d = queries.shape
            nr = refs.shape[0]
            out = np.empty(nq)
            for i in range(nq):
                best = np.inf
                for j in range(nr):
                    acc = 0.0
                    for k in range(d):
                        t = queries[i, k] - refs[j, k]
                        acc += t * t
                        if acc >= best:
                            break
                    if acc < best:
                        best = acc
                out[i] = best
            return out

        @njit(cache=True)
        def _nb_conflict_keep_mask(points, sq_thresh):
            n, d = points.shape
            keep = np.ones(n, dtype=np.bool_)
            if n < 2:
                return keep
            adj = np.zeros((n, n), dtype=np.bool_)
            degree = np.zeros(n, dtype=np.int64)
            for i in range(n):
                for j in range(i + 1, n):
                    acc = 0.0
                    for k in range(d):
                        t = points[i, k] - points[j, k]
                        acc += t * t
                    if acc < sq_thresh:
                        adj[i, j] = True
                        adj[j, i] = True
                        degree[i] += 1
                        degree[j] += 1
            while True:
                best = 0
                arg = -1
                for i in range(n):
                    if degree[i] > best:
                        best = degree[i]
                        arg = i
                if arg < 0:
                    return keep
                for j in range(n):
                    if adj[arg, j]:
                        degree[j] -= 1
                        adj[arg, j] = False
                        adj[j, arg] = False
                degree[arg] = 0
                keep[arg] = False

        @njit(cache=True)
        def _nb_table_first_match(table_z, table_a, queries, query_a, sq_thresh):
            nq = queries.shape[0]
            nt, d = table_z.shape
            out = np.full(nq, -1, dtype=np.int64)
            for qi in range(nq):
                for ti in range(nt):
                    if table_a[ti] != query_a[qi]:
                        continue
                    acc = 0.0
                    for k in range(d):
                        t = table_z[ti, k] - queries[qi, k]
                        acc += t * t
                    if acc < sq_thresh:
                        out[qi] = ti
                        break
            return out

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via PPGS_NUMBA=0
        _HAVE_NUMBA = False


def backend() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def min_sqdist_to_set(queries, refs) -> np.ndarray:
    """Squared distance from each query row to its nearest reference row."""
    q, r = _f64(queries), _f64(refs)
    if r.shape[0] == 0:
        return np.full(q.shape[0], np.inf)
    if _HAVE_NUMBA:
        return _nb_min_sqdist_to_set(q, r)
    return _np_min_sqdist_to_set(q, r)


def conflict_keep_mask(points, sq_thresh: float) -> np.ndarray:
    """Resolve pairwise conflicts (squared distance below threshold) by
    greedily dropping the highest-degree vertex, lowest index on ties,
    until no conflicting pair survives."""
    p = _f64(points)
    if _HAVE_NUMBA:
        return _nb_conflict_keep_mask(p, float(sq_thresh))
    return _np_conflict_keep_mask(p, float(sq_thresh))


def table_first_match(table_z, table_a, queries, query_a, sq_thresh) -> np.ndarray:
    """Index of the first table row matching each query's action within the
    squared distance threshold, -1 where nothing matches."""
    tz = _f64(table_z).reshape(-1, queries.shape[-1])
    ta = np.ascontiguousarray(table_a, dtype=np.int64)
    q = _f64(queries)
    qa = np.ascontiguousarray(query_a, dtype=np.int64)
    if _HAVE_NUMBA:
        return _nb_table_first_match(tz, ta, q, qa, float(sq_thresh))
    return _np_table_first_match(tz, ta, q, qa, float(sq_thresh))
