import numpy as np
import pytest

from drivenchain.quadrature import (
    QuadratureError,
    adaptive_quad,
    fixed_quad,
    panel_nodes,
    panels_for,
)


def test_panel_nodes_weights_sum():
    nodes, weights = panel_nodes(0.0, 2.0, panels=5)
    assert weights.sum() == pytest.approx(2.0, rel=1e-14)
    assert nodes.min() > 0.0 and nodes.max() < 2.0


def test_polynomial_exact():
    val = fixed_quad(lambda x: x ** 7 - 2 * x ** 3 + 1.0, 0.0, 1.0, panels=2)
    assert val == pytest.approx(1.0 / 8 - 0.5 + 1.0, rel=1e-14)


def test_oscillatory_matches_trapezoid(nn11):
    t = 40.0
    f = lambda lam: np.cos(t * nn11.omega(lam))
    val = adaptive_quad(f, 0.0, np.pi, cycles=t * nn11.omega_max / (2 * np.pi))
    lam = np.linspace(0.0, np.pi, 200001)
    oracle = np.trapezoid(f(lam), lam)
    assert val == pytest.approx(oracle, abs=1e-9)


def test_complex_integrand(nn11):
    t = 15.0
    f = lambda lam: np.exp(1j * t * nn11.omega(lam))
    val = adaptive_quad(f, 0.0, np.pi, cycles=t * nn11.omega_max / (2 * np.pi))
    lam = np.linspace(0.0, np.pi, 100001)
    assert val == pytest.approx(np.trapezoid(f(lam), lam), abs=1e-8)


def test_nonconvergence_raises():
    # one panel on a fast oscillation cannot stabilize in zero refinements
    f = lambda x: np.cos(300.0 * x)
    with pytest.raises(QuadratureError):
        adaptive_quad(f, 0.0, np.pi, cycles=1.0, max_refine=0, tol=1e-12)


def test_doubling_self_consistency_at_long_times(nn11):
    # node doubling moves the result by less than 1e-8 even at t = 1000
    t = 1000.0
    f = lambda lam: np.cos(t * nn11.omega(lam))
    panels = panels_for(t * nn11.omega_max * np.pi / (2 * np.pi) / np.pi)
    a = fixed_quad(f, 0.0, np.pi, panels)
    b = fixed_quad(f, 0.0, np.pi, 2 * panels)
    assert abs(a - b) < 1e-8
