from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, optimize
from scipy.stats import norm

from svre.darcy import (
    PLUME_CENTERS,
    DarcyConfig,
    darcy_lsf,
    kl_decompose,
    sample_field,
    solve_pressure,
    source_term,
    trapezoid_weights,
)
from svre.oracle import PINNED
from svre.problems import gradient_check

# Leading eigenvalue of exp(-|y - y'| / 0.1) on [0, 1]
LAMBDA1_GRID_4097 = 0.18708264715733133  # Nystrom solve on 4097 nodes
LAMBDA1_ANALYTIC = 0.187082551860978  # root of c - w tan(w / 2), c = 10
G_AT_ORIGIN = 1.3956667933093845  # default config, 513 nodes


def exponential_kernel_lambda1(corr_len):
    c = 1.0 / corr_len
    w = optimize.brentq(lambda w: c - w * math.tan(w / 2), 1e-12, math.pi - 1e-12, xtol=1e-15)
    return 2 * c / (w * w + c * c)


def test_analytic_eigenvalue_oracle():
    assert exponential_kernel_lambda1(0.1) == pytest.approx(LAMBDA1_ANALYTIC, rel=1e-13)
    assert LAMBDA1_GRID_4097 == pytest.approx(LAMBDA1_ANALYTIC, rel=1e-6)


def test_leading_eigenvalue_against_fine_grid():
    assert kl_decompose(0.1, 513, 9).eigenvalues[0] == pytest.approx(LAMBDA1_GRID_4097, rel=1e-4)


def test_eigenvalue_converges_at_second_order():
    errs = [kl_decompose(0.1, m, 1).eigenvalues[0] - LAMBDA1_ANALYTIC for m in (129, 257, 513)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.5 < r < 4.5 for r in ratios)


def test_eigenvalues_sum_to_trace():
    basis = kl_decompose(0.1, 129, 129)
    assert basis.eigenvalues.sum() == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("grid_m,terms", [(513, 9), (513, 49), (257, 20)])
def test_basis_invariants(grid_m, terms):
    basis = kl_decompose(0.1, grid_m, terms)
    lam, funcs = basis.eigenvalues, basis.eigenfunctions
    assert np.all(np.diff(lam) <= 0) and np.all(lam > 0)
    assert lam.sum() <= 1.0
    gram = (funcs * trapezoid_weights(grid_m)) @ funcs.T
    np.testing.assert_allclose(gram, np.eye(terms), atol=1e-8)
    assert np.all(funcs[:, 0] >= 0)
    assert np.all(np.diff(np.cumsum(lam)) >= 0)


def test_basis_cached_and_read_only():
    a = kl_decompose(0.1, 513, 9)
    assert kl_decompose(0.1, 513, 9) is a
    with pytest.raises(ValueError):
        a.eigenvalues[0] = 1.0


def test_kl_rejects_too_many_terms():
    with pytest.raises(ValueError):
        kl_decompose(0.1, 65, 66)


def test_sample_field():
    basis = kl_decompose(0.1, 513, 9)
    np.testing.assert_allclose(sample_field(basis, np.zeros(9)), math.e, rtol=1e-15)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 9))
    log_k = lambda xi: np.log(sample_field(basis, xi)) - 1.0
    np.testing.assert_allclose(log_k(a + b), log_k(a) + log_k(b), atol=1e-12)
    assert np.all(sample_field(basis, 10 * rng.standard_normal((20, 9))) > 0)
    with pytest.raises(ValueError):
        sample_field(basis, np.zeros(8))


def test_source_term():
    peak = 0.8 / (0.05 * math.sqrt(2 * math.pi)) * (1 + math.exp(-8) + math.exp(-32) + math.exp(-72))
    assert source_term(0.2) == pytest.approx(peak, rel=1e-14)
    t = np.linspace(0, 0.5, 51)
    np.testing.assert_allclose(source_term(0.5 - t), source_term(0.5 + t), rtol=1e-12)
    total, _ = integrate.quad(source_term, 0, 1, points=PLUME_CENTERS)
    assert total == pytest.approx(3.2, abs=1e-3)


def test_pressure_constant_coefficients():
    y = np.linspace(0, 1, 129)
    for F, c in [(2.0, 3.0), (-1.0, 0.5)]:
        u = solve_pressure(np.full(129, c), F, source=None)
        np.testing.assert_allclose(u, 1 + F * (1 - y) / c, rtol=1e-14)


def test_pressure_boundary_and_monotonicity():
    basis = kl_decompose(0.1, 513, 9)
    kappa = sample_field(basis, np.random.default_rng(1).standard_normal((5, 9)))
    u = solve_pressure(kappa, np.full(5, 0.3))
    np.testing.assert_array_equal(u[:, -1], 1.0)
    assert np.all(np.diff(u, axis=1) <= 0)


def test_pressure_linear_in_flux():
    basis = kl_decompose(0.1, 513, 9)
    kappa = sample_field(basis, np.random.default_rng(2).standard_normal(9))
    y = np.linspace(0, 1, 513)
    inv = integrate.cumulative_trapezoid((1 / kappa)[::-1], -y[::-1], initial=0.0)[::-1]
    diff = solve_pressure(kappa, 1.7) - solve_pressure(kappa, -0.4)
    np.testing.assert_allclose(diff, 2.1 * inv, rtol=1e-12, atol=1e-14)


def test_pressure_rejects_nonpositive_diffusivity():
    with pytest.raises(ValueError):
        solve_pressure(np.r_[np.ones(64), 0.0], 1.0)


def test_mean_point_against_quadrature():
    cfg = DarcyConfig()

    def Q(s):
        return 0.8 * sum(norm.cdf((s - c) / 0.05) - norm.cdf(-c / 0.05) for c in PLUME_CENTERS)

    # u rises while F + Q < 0 and falls after, so the maximum sits where Q = -F
    y_star = optimize.brentq(lambda y: Q(y) + cfg.mu_F, 0.0, 1.0, xtol=1e-15)
    tail, _ = integrate.quad(lambda s: (cfg.mu_F + Q(s)) / math.e, y_star, 1, epsabs=1e-13, limit=200)
    oracle = cfg.p_thresh - (1 + tail)
    g0 = darcy_lsf(cfg).eval(np.zeros(10))
    assert g0 > 0
    assert g0 == pytest.approx(oracle, abs=1e-5)
    assert g0 == pytest.approx(G_AT_ORIGIN, rel=1e-12)


def test_grid_convergence():
    x = np.random.default_rng(3).standard_normal((10, 10))
    coarse = darcy_lsf(DarcyConfig(grid_m=513)).eval(x)
    fine = darcy_lsf(DarcyConfig(grid_m=1025)).eval(x)
    assert np.max(np.abs(coarse - fine)) < 1e-4


@pytest.mark.parametrize("d", [5, 10, 50])
def test_gradient_matches_finite_differences(d):
    problem = darcy_lsf(DarcyConfig(d=d))
    pts = np.random.default_rng(d).standard_normal((20, d))
    assert max(gradient_check(problem, x, h=1e-5) for x in pts) < 1e-4


def test_flux_gradient_sign():
    # more inflow raises the pressure and lowers g
    problem = darcy_lsf()
    assert np.all(problem.grad(np.random.default_rng(4).standard_normal((10, 10)))[:, 0] < 0)


@pytest.mark.parametrize(
    "kwargs", [{"d": 1}, {"grid_m": 64}, {"corr_len": 0.0}, {"var_lnk": -0.1}, {"d": 600}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        DarcyConfig(**kwargs)


def test_pinned_reference_order():
    entry = PINNED[("darcy", (("d", 10),))]
    assert 1e-5 <= entry["p_ref"] < 1e-4
    assert entry["n_samples"] == 10**7
