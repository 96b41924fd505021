"""Successive-shortest-path kernels for the capacity-constrained assignment.

The bipartite min-cost-flow problem (instances on one side, a handful of
decision-makers on the other) is solved by augmenting instances one at a time
along the cheapest residual path. Because the right side is tiny, the residual
graph condenses onto the decision-maker columns plus a sink: moving a unit
between columns j -> k costs the best single reassignment
``min over rows r in j of (C[r, k] - C[r, j])``; instance-node potentials
cancel in that contraction, so Johnson potentials live on columns and the
sink only. Shortest paths use Dijkstra on clamped non-negative reduced costs,
whose predecessor structure is a tree by construction (a node's predecessor is
settled strictly earlier), so path unwinding always terminates - plain
Bellman-Ford predecessors can cycle here when float rounding creates
ulp-scale negative cycles on tie-dense cost matrices.

Both engines perform the same float operations in the same order with the
same strict-inequality tie-breaking (lowest column, then lowest row), so they
return bit-identical assignments.

Status codes: 0 ok, 1 no open column (infeasible).
"""

from __future__ import annotations

import numpy as np

from ._engine import engine


def _solve_loop(C, cap, assign):
    n, K = C.shape
    sink = K
    count = np.zeros(K, dtype=np.int64)
    M = np.empty((K, K))
    argrow = np.empty((K, K), dtype=np.int64)
    pi = np.zeros(K + 1)
    dist = np.empty(K + 1)
    pred = np.empty(K + 1, dtype=np.int64)
    pred_row = np.empty(K + 1, dtype=np.int64)
    settled = np.empty(K + 1, dtype=np.bool_)
    for i in range(n):
        for j in range(K):
            for k in range(K):
                M[j, k] = np.inf
                argrow[j, k] = -1
        for r in range(n):
            j = assign[r]
            if j < 0:
                continue
            cj = C[r, j]
            for k in range(K):
                if k == j:
                    continue
                v = C[r, k] - cj
                if v < M[j, k]:
                    M[j, k] = v
                    argrow[j, k] = r
        for k in range(K):
            dist[k] = C[i, k] - pi[k]
            pred[k] = -1
            pred_row[k] = -1
            settled[k] = False
        dist[sink] = np.inf
        pred[sink] = -1
        pred_row[sink] = -1
        settled[sink] = False
        for _ in range(K + 1):
            u = -1
            best = np.inf
            for k in range(K + 1):
                if not settled[k] and dist[k] < best:
                    best = dist[k]
                    u = k
            if u < 0:
                break
            settled[u] = True
            if u == sink:
                continue
            for k in range(K):
                if settled[k]:
                    continue
                w = M[u, k] + pi[u] - pi[k]
                if w < 0.0:
                    w = 0.0
                v = dist[u] + w
                if v < dist[k]:
                    dist[k] = v
                    pred[k] = u
                    pred_row[k] = argrow[u, k]
            if count[u] < cap[u]:
                w = pi[u] - pi[sink]
                if w < 0.0:
                    w = 0.0
                v = dist[u] + w
                if v < dist[sink]:
                    dist[sink] = v
                    pred[sink] = u
                    pred_row[sink] = -1
        if pred[sink] < 0:
            return 1
        for k in range(K + 1):
            if dist[k] < np.inf:
                pi[k] += dist[k]
        cur = pred[sink]
        count[cur] += 1
        while pred[cur] >= 0:
            r = pred_row[cur]
            j = pred[cur]
            count[j] -= 1
            assign[r] = cur
            cur = j
            count[cur] += 1
        assign[i] = cur
    return 0


def solve_assignment_numpy(C, cap):
    """Pure-numpy twin of the jitted loop (vectorized per augmentation)."""
    n, K = C.shape
    sink = K
    assign = np.full(n, -1, dtype=np.int64)
    count = np.zeros(K, dtype=np.int64)
    cols = np.arange(K)
    pi = np.zeros(K + 1)
    for i in range(n):
        M = np.full((K, K), np.inf)
        argrow = np.full((K, K), -1, dtype=np.int64)
        for j in range(K):
            idx = np.flatnonzero(assign == j)
            if idx.size == 0:
                continue
            diffs = C[idx] - C[idx, j][:, None]
            am = np.argmin(diffs, axis=0)
            M[j] = diffs[am, cols]
            argrow[j] = idx[am]
            M[j, j] = np.inf
            argrow[j, j] = -1
        dist = np.concatenate([C[i] - pi[:K], [np.inf]])
        pred = np.full(K + 1, -1, dtype=np.int64)
        pred_row = np.full(K + 1, -1, dtype=np.int64)
        settled = np.zeros(K + 1, dtype=bool)
        for _ in range(K + 1):
            open_nodes = np.flatnonzero(~settled & np.isfinite(dist))
            if open_nodes.size == 0:
                break
            u = int(open_nodes[np.argmin(dist[open_nodes])])
            settled[u] = True
            if u == sink:
                continue
            w = np.maximum(M[u] + pi[u] - pi[:K], 0.0)
            v = dist[u] + w
            improve = ~settled[:K] & (v < dist[:K])
            dist[:K] = np.where(improve, v, dist[:K])
            pred[:K] = np.where(improve, u, pred[:K])
            pred_row[:K] = np.where(improve, argrow[u], pred_row[:K])
            if count[u] < cap[u]:
                wv = dist[u] + max(pi[u] - pi[sink], 0.0)
                if wv < dist[sink]:
                    dist[sink] = wv
                    pred[sink] = u
        if pred[sink] < 0:
            return 1, assign
        finite = np.isfinite(dist)
        pi[finite] += dist[finite]
        cur = int(pred[sink])
        count[cur] += 1
        while pred[cur] >= 0:
            r = int(pred_row[cur])
            j = int(pred[cur])
            count[j] -= 1
            assign[r] = cur
            cur = j
            count[cur] += 1
        assign[i] = cur
    return 0, assign


try:
    from numba import njit

    _solve_loop_jit = njit(cache=True)(_solve_loop)

    def solve_assignment_numba(C, cap):
        assign = np.full(C.shape[0], -1, dtype=np.int64)
        status = _solve_loop_jit(
            np.ascontiguousarray(C), np.ascontiguousarray(cap), assign
        )
        return int(status), assign

except ImportError:  # pragma: no cover - exercised via DECCAF_ENGINE=numpy
    solve_assignment_numba = None

solve_assignment = (
    solve_assignment_numba if engine() == "numba" else solve_assignment_numpy
)
