import numpy as np
import pytest

from mtebounds import QuadratureError
from mtebounds.quadrature import (
    adaptive,
    integrate_adaptive,
    integrate_box,
    integrate_box_maxkink,
)


def test_polynomial_exactness_1d():
    val = integrate_box(lambda p: p[:, 0] ** 5, [(0, 1)], n=8)
    assert val == pytest.approx(1 / 6, abs=1e-14)


def test_tensor_2d():
    val = integrate_box(lambda p: p[:, 0] * p[:, 1] ** 2, [(0, 1), (0, 1)], n=8)
    assert val == pytest.approx(1 / 6, abs=1e-14)


def test_maxkink_matches_order_statistic_density():
    # E[f(max(V1, V2))] = int f(t) 2t dt for iid uniforms
    for f, truth in [
        (lambda t: t, 2 / 3),
        (lambda t: t ** 2, 1 / 2),
        (lambda t: np.exp(t), 2.0),  # int exp(t) 2t dt = 2[t e^t - e^t]_0^1 = 2
    ]:
        val = integrate_box_maxkink(
            lambda p, _f=f: _f(np.maximum(p[:, 0], p[:, 1])), [(0, 1), (0, 1)], n=48
        )
        assert val == pytest.approx(truth, abs=1e-12)


def test_maxkink_on_subrectangle():
    # region [0, 0.5] x [0, 1]; split the kinked factor analytically:
    # int_0^.5 int_0^1 max(v1,v2) dv2 dv1 = int_0^.5 (v1^2/2 + (1-v1^2)/2 + ...) handled
    # numerically against a dense Monte Carlo-free midpoint refinement
    f = lambda p: np.maximum(p[:, 0], p[:, 1])
    val = integrate_box_maxkink(f, [(0, 0.5), (0, 1)], n=32)
    xs = (np.arange(4000) + 0.5) / 4000 * 0.5
    ys = (np.arange(4000) + 0.5) / 4000
    grid = np.maximum(xs[:, None], ys[None, :]).mean() * 0.5
    assert val == pytest.approx(grid, abs=1e-6)
    # multiplied by a smooth factor of both coordinates
    g = lambda p: np.maximum(p[:, 0], p[:, 1]) * np.exp(p[:, 0] - p[:, 1])
    v48 = integrate_box_maxkink(g, [(0, 0.5), (0.25, 1)], n=48)
    v96 = integrate_box_maxkink(g, [(0, 0.5), (0.25, 1)], n=96)
    assert v48 == pytest.approx(v96, abs=1e-13)


def test_vector_valued_integrand():
    f = lambda p: np.column_stack([p[:, 0], p[:, 0] ** 2])
    val = integrate_adaptive(f, [(0, 1)], tol=1e-12)
    assert np.allclose(val, [0.5, 1 / 3], atol=1e-13)


def test_adaptive_raises_on_jump():
    f = lambda p: (p[:, 0] > 1 / np.sqrt(2)).astype(float)
    with pytest.raises(QuadratureError):
        adaptive(lambda n: integrate_box(f, [(0, 1)], n), tol=1e-12, start=16, max_nodes=128)


def test_steep_sigmoid_stabilizes():
    from scipy.special import ndtr

    f = lambda p: 1 - ndtr((p[:, 0] - 0.35) / 0.04)
    val = integrate_adaptive(f, [(0, 1)], tol=1e-9)
    dense = integrate_box(f, [(0, 1)], n=1024)
    assert val == pytest.approx(dense, abs=1e-10)
