import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from junction_control.hamiltonians import (edge_hamiltonian_closed, edge_hamiltonian_grid, hamiltonian_p_derivative,
                                           quadratic_growth_check)
from junction_control.problem import EdgeDynamics, eval_coefficients

from .oracles import grid_min_sin_quadratic

# |closed - grid| * steps^2 measured on the section5 edges for steps in {11, ..., 10001}: at most 2.41
GRID_ERROR_CONSTANT = 2.5


def sinq(theta=0.5, gamma=0.0, lam=0.0, rho=0.0, kappa=2.0, sigma=1.0):
    return EdgeDynamics("sin_quadratic", sigma=sigma, kappa=kappa, theta=theta, gamma=gamma, lam=lam, rho=rho)


@pytest.mark.parametrize("p", [-3.0, 0.0, 2.5])
def test_vertex_value_independent_of_p(p):
    # sin(0) = 0: theta k^2 + lam k + rho is minimised at k = -lam / (2 theta) = -1 with value 0
    d = sinq(theta=1.0, lam=2.0, rho=1.0, kappa=10.0)
    ev = edge_hamiltonian_closed(d, 0.0, p)
    ref = grid_min_sin_quadratic(1.0, 0.0, 2.0, 1.0, 10.0, 0.0, p, 200001)
    assert ev.argmin == pytest.approx(-1.0, abs=1e-15)
    assert ev.value == pytest.approx(0.0, abs=1e-12)
    assert ev.value == pytest.approx(ref[0], abs=1e-8)


def test_interior_minimiser_matches_grid_oracle():
    d = sinq(theta=0.5, kappa=2.0)
    ev = edge_hamiltonian_closed(d, math.pi / 2, 1.0)
    val, k = grid_min_sin_quadratic(0.5, 0.0, 0.0, 0.0, 2.0, math.pi / 2, 1.0, 40001)  # step 1e-4
    assert ev.argmin == pytest.approx(-1.0, abs=1e-15)
    assert ev.value == pytest.approx(-0.5, abs=1e-15)
    assert ev.value == pytest.approx(val, abs=1e-8)
    assert ev.argmin == pytest.approx(k, abs=1e-4)


def test_clipped_minimiser_matches_grid_oracle():
    d = sinq(theta=0.5, kappa=0.5)
    ev = edge_hamiltonian_closed(d, math.pi / 2, 1.0)
    val, k = grid_min_sin_quadratic(0.5, 0.0, 0.0, 0.0, 0.5, math.pi / 2, 1.0, 10001)
    assert ev.argmin == -0.5
    assert ev.value == pytest.approx(-0.375, abs=1e-15)
    assert (val, k) == (pytest.approx(-0.375, abs=1e-15), -0.5)


def test_grid_constant_family_tie_rule():
    d = EdgeDynamics("constant", sigma=1.0, kappa=1.5, drift=0.0, cost=0.8)
    for x in (0.0, 1.0, 3.0):
        ev = edge_hamiltonian_grid(d, x, 2.0, 7)
        assert ev == (0.8, -1.5)
    assert edge_hamiltonian_closed(d, 1.0, 2.0).argmin == -1.5


def test_grid_two_points():
    d = sinq(theta=1e-12, kappa=1.0)  # h vanishes up to 1e-12
    ev = edge_hamiltonian_grid(d, math.pi / 2, 1.0, 2)
    assert ev.argmin == -1.0
    assert ev.value == pytest.approx(-1.0, abs=1e-11)


def test_grid_rejects_single_point():
    with pytest.raises(ValueError):
        edge_hamiltonian_grid(sinq(), 0.0, 0.0, 1)


def test_growth_examples():
    d = sinq(theta=0.5, gamma=0.5, lam=0.3, rho=1.0)
    rng = np.random.default_rng(3)
    xs, ps = rng.uniform(0, 8, 5000), rng.uniform(-100, 100, 5000)
    m1 = 1 / (2 * 0.5) + 0.3 / 0.5 + 0.09 / (2 * 0.5) + 0.5 + 1.0
    assert quadratic_growth_check(d, (xs, ps), m1)
    c = EdgeDynamics("constant", sigma=1.0, kappa=1.0, drift=-0.4, cost=0.7)
    assert quadratic_growth_check(c, (xs, ps), 0.4 + 0.7)
    z = sinq(rho=1.0)
    res = quadratic_growth_check(z, (np.array([1.0, 0.0]), np.array([3.0, 0.0])), 0.0)
    assert not res
    assert res.witness == (1.0, 3.0)  # first violating sample
    res = quadratic_growth_check(z, (np.array([0.0]), np.array([0.0])), 0.0)
    assert res.witness == (0.0, 0.0)


section5_edges = [sinq(0.5, 0.5, 0.3, 1.0, sigma=1.0), sinq(0.5, -0.4, -0.2, 0.8, sigma=0.8),
                  sinq(0.5, 0.2, 0.1, 1.2, sigma=1.2)]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(section5_edges), st.floats(0, 8), st.floats(-20, 20))
def test_closed_form_is_the_infimum(d, x, p):
    ev = edge_hamiltonian_closed(d, x, p)
    ks = np.linspace(-d.kappa, d.kappa, 801)
    _, b, h = eval_coefficients(d, np.full(ks.size, x), ks)
    assert np.all(ev.value <= b * p + h + 1e-12)
    assert -d.kappa <= ev.argmin <= d.kappa
    _, b0, h0 = eval_coefficients(d, x, ev.argmin)
    assert ev.value == pytest.approx(b0 * p + h0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(section5_edges), st.floats(0.05, 3.09), st.floats(-1, 1))
def test_concave_in_p_when_unclipped(d, x, p):
    h = 1e-2
    vals = [edge_hamiltonian_closed(d, x, p + j * h) for j in (-1, 0, 1)]
    if any(abs(v.argmin) >= d.kappa for v in vals):
        return
    second = vals[0].value - 2 * vals[1].value + vals[2].value
    assert second < 0
    assert second == pytest.approx(-math.sin(x) ** 2 / (2 * d.theta) * h * h, rel=1e-6, abs=1e-14)


@pytest.mark.parametrize("steps", [11, 101, 1001])
def test_grid_error_is_second_order(steps):
    rng = np.random.default_rng(steps)
    worst = 0.0
    for d in section5_edges:
        for x, p in zip(rng.uniform(0, 8, 200), rng.uniform(-10, 10, 200)):
            worst = max(worst, abs(edge_hamiltonian_grid(d, x, p, steps).value - edge_hamiltonian_closed(d, x, p).value))
    assert worst <= GRID_ERROR_CONSTANT / steps**2


def test_vectorised_matches_scalar():
    d = section5_edges[1]
    xs, ps = np.linspace(0, 8, 50), np.linspace(-30, 30, 50)
    ev = edge_hamiltonian_closed(d, xs, ps)
    for j in range(50):
        s = edge_hamiltonian_closed(d, xs[j], ps[j])
        assert (s.value, s.argmin) == (ev.value[j], ev.argmin[j])


def test_p_derivative_by_envelope():
    d = section5_edges[0]
    xs = np.linspace(0.1, 7.9, 40)
    for p in (-15.0, -1.0, 0.5, 12.0):
        fd = (edge_hamiltonian_closed(d, xs, p + 1e-6).value - edge_hamiltonian_closed(d, xs, p - 1e-6).value) / 2e-6
        np.testing.assert_allclose(hamiltonian_p_derivative(d, xs, p), fd, atol=1e-6)
