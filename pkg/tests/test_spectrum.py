import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import Polynomial

from plrf.core import ConfigError
from plrf.spectrum import (
    adaptive_eta,
    density_curve,
    discrete_kappa,
    exact_f,
    fig6_grid,
    solve_kappa,
    solve_m,
    solve_m_grid,
    weighted_density,
)


def _poly_roots(alpha, d, v, z):
    """Roots of the fixed-point equation cleared of denominators."""
    x = np.arange(1, v + 1) ** (-2.0 * alpha)
    lin = [Polynomial([-z, xj]) for xj in x]
    prod = Polynomial([1.0])
    for p in lin:
        prod = prod * p
    total = Polynomial([-1.0, 1.0]) * prod
    for j, xj in enumerate(x):
        rest = Polynomial([1.0])
        for k, p in enumerate(lin):
            if k != j:
                rest = rest * p
        total = total + Polynomial([0.0, xj / d]) * rest
    return total.roots()


@pytest.mark.parametrize("z", [0.3 + 0.05j, 0.02 + 0.01j, 1.5 + 0.2j, -0.4 + 0.1j])
def test_polynomial_root_oracle(z):
    roots = _poly_roots(0.7, 3, 6, z)
    lower = [r for r in roots if r.imag < 0]
    assert len(lower) == 1  # a unique root on the physical branch
    sol = solve_m(0.7, 3, 6, z)
    assert abs(sol.m - lower[0]) < 1e-9 * max(1, abs(lower[0]))


def test_large_z_limit():
    assert abs(solve_m(0.7, 100, 400, 1e6 + 1j).m - 1) < 1e-5


def test_residual_history_and_quadratic_convergence():
    sol = solve_m(0.8, 200, 800, 0.05 + 1e-3j)
    assert sol.residual <= 1e-10
    h = [r for r in sol.residuals if r > 1e-13]
    # once close, the residual roughly squares each step
    tail = [(a, b) for a, b in zip(h, h[1:]) if a < 1e-3]
    for a, b in tail:
        assert b <= 10 * a**2 + 1e-13


def test_rejects_lower_half_plane():
    with pytest.raises(ConfigError):
        solve_m(0.7, 10, 40, 0.1 - 0.1j)


def test_grid_of_one_point():
    z = 0.2 + 0.01j
    assert solve_m_grid(0.7, 50, 200, [z])[0].m == solve_m(0.7, 50, 200, z, init=1.0).m


def test_grid_residuals_and_order_independence():
    grid = fig6_grid(0.7, 60, u_max=0.5)[::7]
    fwd = solve_m_grid(0.7, 60, 240, grid)
    bwd = solve_m_grid(0.7, 60, 240, grid[::-1])[::-1]
    assert max(s.residual for s in fwd) <= 1e-10
    np.testing.assert_allclose([s.m for s in fwd], [s.m for s in bwd], rtol=1e-8, atol=1e-10)


@given(st.floats(0.3, 1.5), st.floats(1e-4, 2.0), st.floats(1e-4, 1.0))
def test_branch_property(alpha, u, eta):
    sol = solve_m(alpha, 20, 80, complex(u, eta))
    assert sol.m.imag < 0
    assert sol.residual <= 1e-10


def test_tail_expansion_matches_explicit_sum():
    # v above the explicit-term limit goes through the Hurwitz-zeta tail
    z, d, v = 0.01 + 0.002j, 50, 3 * 10**6
    m = solve_m(1.0, d, v, z).m
    x = np.arange(1, v + 1, dtype=np.float64) ** -2.0
    resid = m + np.sum(x * m / (x * m - z)) / d - 1.0
    assert abs(resid) < 1e-10


def test_infinite_v_close_to_large_v():
    z = 0.01 + 0.002j
    a = solve_m(1.0, 50, math.inf, z).m
    b = solve_m(1.0, 50, 10**6, z).m
    # omitted tail is about (1/|z|) sum_{j>1e6} j^-2 / d = 2e-6
    assert abs(a - b) < 4e-6


def test_exact_case_small():
    zeta_ = 0.2
    d = 400
    m = solve_m(1.0, d, math.inf, zeta_ * d**-2.0 + 1e-14j).m
    assert abs(m - exact_f(zeta_)) / abs(exact_f(zeta_)) < 0.02


def test_kappa_analytic():
    assert solve_kappa(1.0, math.inf).kappa == pytest.approx((2 / math.pi) ** 2, rel=1e-9)


def test_kappa_monotone_in_ratio():
    k = [solve_kappa(0.7, r).kappa for r in (1.05, 2.0, 8.0)]
    assert k[0] > k[1] > k[2]


def test_kappa_midpoint_oracle():
    alpha, ratio = 0.35, 4.0
    n = 10**6
    x = (np.arange(n) + 0.5) * (ratio / n)
    xp = x ** (2 * alpha)

    def g(k):
        return np.sum(k / (k + xp)) * (ratio / n) - 1.0

    from scipy.optimize import brentq

    k_ref = brentq(g, 1e-6, 1e3, xtol=1e-14)
    assert solve_kappa(alpha, ratio).kappa == pytest.approx(k_ref, rel=1e-6)


@pytest.mark.parametrize("alpha, ratio, msg", [(0.4, math.inf, "2\\*alpha > 1"), (0.7, 1.0, "ratio")])
def test_kappa_rejects(alpha, ratio, msg):
    with pytest.raises(ConfigError, match=msg):
        solve_kappa(alpha, ratio)


def test_discrete_kappa_close_to_continuum():
    k_d = discrete_kappa(0.8, 500, 2000)
    k_c = solve_kappa(0.8, 4.0).kappa * 500 ** (1.6)
    assert k_d == pytest.approx(k_c, rel=0.05)


def test_densities_vanish_far_from_spectrum():
    p = weighted_density(0.7, 50, 200, 0.7, 10.0, eta=1e-9)
    assert 0 <= p.trace_density <= 1e-6
    assert 0 <= p.target_density <= 1e-6


def test_density_tail_is_lorentzian():
    # away from the spectrum the density is the Cauchy tail of the total mass
    d, v = 50, 200
    eta = 1e-3
    p = weighted_density(0.7, d, v, 0.7, 10.0, eta=eta)
    assert p.trace_density == pytest.approx(v * eta / (math.pi * 100.0), rel=0.05)


def test_density_mass():
    d, v, eta = 40, 160, 0.01
    us = np.concatenate([np.linspace(-30, -1, 300), np.linspace(-1, 3, 4000), np.linspace(3, 30, 300)])
    pts = density_curve(0.7, d, v, 0.7, us, eta=eta, remove_point_mass=True)
    tr = np.array([p.trace_density for p in pts])
    mass = np.trapezoid(tr, us) + 2 * d * eta / (math.pi * 30)  # Lorentzian tails beyond |u| = 30
    assert mass == pytest.approx(d, rel=0.01)


def test_adaptive_eta_positive():
    e = adaptive_eta(0.7, 100, np.array([1e-4, 0.1, 1.0]))
    assert np.all(e > 0)


def test_densities_nonnegative():
    for p in density_curve(0.7, 40, 160, 0.3, np.linspace(1e-3, 1.2, 50), eta=1e-3):
        assert p.trace_density >= -1e-12
        assert p.target_density >= -1e-12
