import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metapinn import problems as pr

jet_value = st.floats(-1e3, 1e3, allow_nan=False)


def test_advection_residual_and_exact():
    p = pr.advection_problem(1.0)
    assert p.residual(None, {"u_t": 1.0, "u_x": -1.0}) == 0.0
    assert p.exact(0.5, 0.25) == pytest.approx(math.cos(math.pi * (0.25 - 0.5)), abs=1e-15)
    stationary = pr.advection_problem(0.0)
    x = np.linspace(-1, 1, 7)
    assert np.allclose(stationary.exact(2.0, x), np.cos(np.pi * x), atol=1e-15)
    assert p.max_derivative_order == 1
    assert p.domain.t_range == (0.0, 3.0)
    assert p.gamma_i == 1.0


def test_advection_exact_solution_satisfies_residual():
    rng = np.random.default_rng(0)
    for c in (1.0, -0.4):
        p = pr.advection_problem(c)
        t, x = rng.uniform(0, 3, 1000), rng.uniform(-1, 1, 1000)
        # analytic derivatives of cos(pi (x - c t))
        s = np.sin(np.pi * (x - c * t))
        jet = {"u": p.exact(t, x), "u_t": np.pi * c * s, "u_x": -np.pi * s}
        assert np.max(np.abs(p.residual(np.column_stack([t, x]), jet))) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(u=jet_value, ut=jet_value, ux=jet_value, uxx=jet_value, uxxx=jet_value)
def test_residuals_match_hand_coded(u, ut, ux, uxx, uxxx):
    jet = {"u": u, "u_t": ut, "u_x": ux, "u_xx": uxx, "u_xxx": uxxx}
    assert pr.kdv_problem(0.0025).residual(None, jet) == ut + u * ux - 0.0025 * uxxx
    nu = 0.01 / math.pi
    assert pr.burgers_problem().residual(None, jet) == ut + u * ux - nu * uxx
    assert pr.advection_problem(0.7).residual(None, jet) == ut + 0.7 * ux


def test_kdv_examples():
    p = pr.kdv_problem(0.0025)
    assert p.residual(None, {"u": 5.0, "u_t": 0.0, "u_x": 0.0, "u_xxx": 0.0}) == 0.0
    assert p.residual(None, {"u": 2.0, "u_t": 0.0, "u_x": 3.0, "u_xxx": 0.0}) == 6.0
    assert p.residual(None, {"u": 1.0, "u_t": 1.0, "u_x": 1.0, "u_xxx": 400.0}) == pytest.approx(1.0, abs=1e-15)
    assert p.max_derivative_order == 3
    assert p.ic(0.5) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        pr.kdv_problem(-1.0)


def test_burgers_examples():
    p = pr.burgers_problem()
    assert p.params["nu"] == 0.01 / math.pi
    assert p.params["nu"] == pytest.approx(3.1831e-3, rel=1e-4)
    assert p.residual(None, {"u": 1.0, "u_t": -1.0, "u_x": 1.0, "u_xx": 0.0}) == 0.0
    assert p.residual(None, {"u": 0.0, "u_t": 0.0, "u_x": 0.0, "u_xx": 0.0}) == 0.0
    assert p.max_derivative_order == 2
    with pytest.raises(ValueError):
        pr.burgers_problem(0.0)


def test_kdv_initial_family():
    assert pr.kdv_initial_family(2, -math.pi / 4)(0.0) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)
    assert pr.kdv_initial_family(1, 0.0)(0.0) == 1.0
    x = np.linspace(-1, 1, 9)
    assert np.allclose(pr.kdv_initial_family(1, math.pi / 2)(x), -np.sin(x), atol=1e-15)
    assert np.allclose(pr.kdv_initial_family(3, 0.0, k_in_pi_units=True)(x), np.cos(3 * np.pi * x))
    for k, phi in [(0, 0.0), (4, 0.0), (1, 2.0), (2, -1.6)]:
        with pytest.raises(ValueError):
            pr.kdv_initial_family(k, phi)


def test_poisson_exact_and_forcing():
    p = pr.poisson_problem()
    assert p.exact(0.0, 0.25) == 0.0
    assert p.gamma_b == 1000.0
    assert p.ic is None and p.max_derivative_order == 2
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-0.95, 0.95, 100), rng.uniform(-0.95, 0.95, 100)
    u = pr.poisson_exact

    def five_point(h):
        return (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4 * u(x, y)) / h**2

    lap = (4 * five_point(1e-3) - five_point(2e-3)) / 3
    f = pr.poisson_forcing(x, y)
    assert np.max(np.abs(lap - f) / np.maximum(1.0, np.abs(f))) <= 1e-6


def test_poisson_forcing_symbolic():
    sp = pytest.importorskip("sympy")
    X, Y = sp.symbols("x y")
    u = (sp.Rational(1, 10) * sp.sin(2 * sp.pi * X) + sp.tanh(10 * X)) * sp.sin(2 * sp.pi * Y)
    f = sp.lambdify((X, Y), sp.diff(u, X, 2) + sp.diff(u, Y, 2), "numpy")
    pts = np.random.default_rng(2).uniform(-1, 1, (100, 2))
    assert np.allclose(f(pts[:, 0], pts[:, 1]), pr.poisson_forcing(pts[:, 0], pts[:, 1]), rtol=1e-12, atol=1e-10)


def test_poisson_residual_zero_on_exact_jet():
    p = pr.poisson_problem()
    pts = np.random.default_rng(3).uniform(-1, 1, (50, 2))
    f = pr.poisson_forcing(pts[:, 0], pts[:, 1])
    jet = {"u_xx": f, "u_yy": np.zeros(50)}
    assert np.all(p.residual(pts, jet) == 0.0)


def test_domain_validation():
    with pytest.raises(ValueError):
        pr.Domain(x_ranges=((1.0, -1.0),), periodic=(True,))
    with pytest.raises(ValueError):
        pr.Domain(x_ranges=((-1.0, 1.0),), periodic=(True,), t_range=(0.0, 0.0))
    with pytest.raises(ValueError):
        pr.BoundarySpec("dirichlet")
    with pytest.raises(ValueError):
        pr.make_problem("heat")


def test_sampling_advection_counts_and_bounds():
    p = pr.advection_problem()
    c = pr.sample_collocation(p, (10000, 100, 100), seed=0)
    assert c.pde_points.shape == (10000, 2) and c.ic_points.shape == (100, 2) and len(c.bc_points) == 0
    t, x = c.pde_points.T
    assert t.min() >= 0 and t.max() <= 3 and x.min() >= -1 and x.max() <= 1
    assert not c.ic_points[:, 0].any()


def test_sampling_poisson_edges():
    c = pr.sample_collocation(pr.poisson_problem(), (500, 0, 400), seed=4)
    b = c.bc_points
    assert len(b) == 400 and len(c.ic_points) == 0
    edges = [b[:, 1] == -1, b[:, 0] == 1, b[:, 1] == 1, b[:, 0] == -1]
    assert [int(e.sum()) for e in edges] == [100, 100, 100, 100]
    assert np.all(np.abs(b) <= 1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(pr.PROBLEM_NAMES), n=st.integers(1, 300))
def test_sampling_within_bounds_and_deterministic(seed, name, n):
    p = pr.make_problem(name)
    a = pr.sample_collocation(p, (n, n, n), seed)
    b = pr.sample_collocation(p, (n, n, n), seed)
    assert np.array_equal(a.pde_points, b.pde_points) and np.array_equal(a.bc_points, b.bc_points)
    for (lo, hi), col in zip(p.domain.bounds(), a.pde_points.T):
        assert np.all(col >= lo) and np.all(col <= hi)


def test_make_problem_kdv_family_member():
    p = pr.make_problem("kdv", ic_k=2, ic_phi=-math.pi / 4, ic_k_in_pi=True)
    x = np.array([-0.3, 0.0, 0.7])
    assert np.allclose(p.ic(x), np.cos(2 * np.pi * x - math.pi / 4), rtol=0, atol=1e-15)
    assert p.params["ic"].startswith("cos(2x*pi")
    with pytest.raises(ValueError):
        pr.make_problem("kdv", ic_k=4)
