"""Gauss-Legendre quadrature over boxes in [0,1]^K.

Integrands are vectorized callables ``f(points) -> values`` where ``points``
has shape (m, K) and values has shape (m,) or (m, q) for q simultaneous
integrands. Accuracy is reached by doubling the per-axis node count until two
successive estimates agree.

The two-dimensional selection model with a ``max(v1, v2)`` index has a kink
along the diagonal; ``integrate_box_maxkink`` splits the box into regions on
which the integrand is smooth (triangles of diagonal squares, plus boxes that
lie entirely above or below the diagonal) so the tensor rule keeps its fast
convergence.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .model import QuadratureError

Bounds = Sequence[tuple[float, float]]


@lru_cache(maxsize=32)
def gl_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _tensor_points(bounds: Bounds, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gl_nodes(n)
    axes_pts, axes_w = [], []
    for lo, hi in bounds:
        axes_pts.append(lo + (hi - lo) * x)
        axes_w.append((hi - lo) * w)
    if len(bounds) == 1:
        return axes_pts[0][:, None], axes_w[0]
    p1, p2 = np.meshgrid(axes_pts[0], axes_pts[1], indexing="ij")
    ww = np.outer(axes_w[0], axes_w[1])
    pts = np.column_stack([p1.ravel(), p2.ravel()])
    return pts, ww.ravel()


def integrate_box(f: Callable, bounds: Bounds, n: int = 64) -> np.ndarray:
    """Tensor-product rule over an axis-aligned box (K = 1 or 2)."""
    pts, w = _tensor_points(bounds, n)
    vals = np.asarray(f(pts))
    return w @ vals


def _integrate_triangle(f: Callable, a: float, b: float, lower: bool, n: int) -> np.ndarray:
    # lower: {(v1, v2): a <= v2 <= v1 <= b}; substitution v2 = a + t (v1 - a)
    x, w = gl_nodes(n)
    v1 = a + (b - a) * x
    jac = (b - a) * w * (v1 - a)
    t, wt = gl_nodes(n)
    vv1 = np.repeat(v1, n)
    vv2 = a + np.repeat(v1 - a, n) * np.tile(t, n)
    weights = np.repeat(jac, n) * np.tile(wt, n)
    pts = np.column_stack([vv1, vv2]) if lower else np.column_stack([vv2, vv1])
    vals = np.asarray(f(pts))
    return weights @ vals


def integrate_box_maxkink(f: Callable, bounds: Bounds, n: int = 64) -> np.ndarray:
    """Box rule for integrands with a kink along v1 = v2.

    The box is refined by the union of both axes' endpoints; refined pieces
    are diagonal squares (split into two triangles) or boxes with the
    diagonal outside their interior (plain tensor rule).
    """
    (a1, b1), (a2, b2) = bounds
    cuts = sorted({a1, b1, a2, b2})
    segs1 = [(lo, hi) for lo, hi in zip(cuts, cuts[1:]) if lo >= a1 - 1e-15 and hi <= b1 + 1e-15]
    segs2 = [(lo, hi) for lo, hi in zip(cuts, cuts[1:]) if lo >= a2 - 1e-15 and hi <= b2 + 1e-15]
    total = None
    for s1 in segs1:
        for s2 in segs2:
            if abs(s1[0] - s2[0]) < 1e-15 and abs(s1[1] - s2[1]) < 1e-15:
                part = _integrate_triangle(f, s1[0], s1[1], True, n) + _integrate_triangle(
                    f, s1[0], s1[1], False, n
                )
            else:
                part = integrate_box(f, (s1, s2), n)
            total = part if total is None else total + part
    assert total is not None
    return total


def adaptive(
    estimate: Callable[[int], np.ndarray],
    tol: float = 1e-9,
    start: int = 64,
    max_nodes: int = 1024,
) -> np.ndarray:
    """Double the node count until successive estimates agree within ``tol``."""
    n = start
    prev = np.asarray(estimate(n))
    while n < max_nodes:
        n *= 2
        cur = np.asarray(estimate(n))
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    raise QuadratureError(
        f"integral did not stabilize to {tol} within {max_nodes} nodes per axis"
    )


def integrate_adaptive(
    f: Callable,
    bounds: Bounds,
    tol: float = 1e-9,
    maxkink: bool = False,
    start: int = 64,
    max_nodes: int = 1024,
) -> np.ndarray:
    rule = integrate_box_maxkink if maxkink else integrate_box
    return adaptive(lambda n: rule(f, bounds, n), tol=tol, start=start, max_nodes=max_nodes)
