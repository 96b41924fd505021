"""Split-scan kernels for boosted decision stumps.

Both engines scan every feature in ascending column order and every split
position in ascending row order, keeping the first strictly-best Newton gain,
so tie-breaking is identical. The numba path accumulates running sums in
machine code; the numpy path uses cumulative sums (same semantics, float
rounding may differ in the last ulps).
"""

from __future__ import annotations

import numpy as np

from ._engine import engine

_DENOM_EPS = 1e-16


def best_split_numpy(xs, order, grad, hess, l2):
    """Best (feature, split position, gain) for presorted columns.

    xs: (n, d) feature values sorted ascending per column.
    order: (n, d) row indices producing that sort.
    grad, hess: (n,) per-row gradient and hessian of the logistic loss.
    Returns (-1, -1, 0.0) when no split has positive gain.
    """
    n, d = xs.shape
    if n < 2:
        return -1, -1, 0.0
    gs = grad[order]
    hs = hess[order]
    total_g = float(np.sum(grad))
    total_h = float(np.sum(hess))
    parent = total_g * total_g / (total_h + l2 + _DENOM_EPS)
    gl = np.cumsum(gs[:-1], axis=0)
    hl = np.cumsum(hs[:-1], axis=0)
    gr = total_g - gl
    hr = total_h - hl
    gain = (
        gl * gl / (hl + l2 + _DENOM_EPS)
        + gr * gr / (hr + l2 + _DENOM_EPS)
        - parent
    )
    gain[xs[:-1] >= xs[1:]] = -np.inf
    flat = np.ascontiguousarray(gain.T).reshape(-1)  # feature-major order
    k = int(np.argmax(flat))
    best = float(flat[k])
    if not best > 0.0:
        return -1, -1, 0.0
    return k // (n - 1), k % (n - 1), best


def _best_split_loop(xs, order, grad, hess, l2):
    n, d = xs.shape
    best_feat = -1
    best_pos = -1
    best_gain = 0.0
    if n < 2:
        return best_feat, best_pos, best_gain
    total_g = 0.0
    total_h = 0.0
    for i in range(n):
        total_g += grad[i]
        total_h += hess[i]
    parent = total_g * total_g / (total_h + l2 + _DENOM_EPS)
    for f in range(d):
        gl = 0.0
        hl = 0.0
        for p in range(n - 1):
            r = order[p, f]
            gl += grad[r]
            hl += hess[r]
            if xs[p, f] < xs[p + 1, f]:
                gr = total_g - gl
                hr = total_h - hl
                gain = (
                    gl * gl / (hl + l2 + _DENOM_EPS)
                    + gr * gr / (hr + l2 + _DENOM_EPS)
                    - parent
                )
                if gain > best_gain:
                    best_gain = gain
                    best_feat = f
                    best_pos = p
    return best_feat, best_pos, best_gain


try:
    from numba import njit

    best_split_numba = njit(cache=True)(_best_split_loop)
except ImportError:  # pragma: no cover - exercised via DECCAF_ENGINE=numpy
    best_split_numba = None

best_split = best_split_numba if engine() == "numba" else best_split_numpy
