import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from agespectra.evolution import compute_diffused_propagator
from agespectra.model import KernelSpec
from agespectra.spectral import (
    DomainError,
    assemble_M_lambda,
    homogeneous_closed_form,
    power_iteration,
    solve_alpha_star,
    solve_spectral_bound,
    spectral_radius,
    spectral_radius_F,
)

from conftest import make

CONSTANT = KernelSpec("constant", radius=2.0)


@given(seed=st.integers(0, 10_000), n=st.integers(2, 30))
@settings(max_examples=40, deadline=None)
def test_perron_root_matches_dense_eigenvalues(seed, n):
    A = np.random.default_rng(seed).uniform(0.01, 1.0, (n, n))
    res = spectral_radius(A)
    assert res.radius == pytest.approx(np.abs(np.linalg.eigvals(A)).max(), rel=1e-10)
    assert res.vector.min() > 0
    np.testing.assert_allclose(A @ res.vector, res.radius * res.vector, rtol=1e-8)


def test_power_iteration_on_known_operator():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    radius, vec = power_iteration(lambda v: A @ v, np.array([1.0, 0.2]), lambda v: np.abs(v).sum())[:2]
    assert radius == pytest.approx(3.0, rel=1e-10)
    np.testing.assert_allclose(vec / vec[0], [1.0, 1.0], rtol=1e-8)


def test_homogeneous_infinite_horizon_identity():
    cfg = make("2", "0.5", kernel=CONSTANT, n_x=41, n_a=200)
    rep = solve_spectral_bound(cfg)
    # varpi = 1.5 solves 2/(s + 0.5) = 1; lambda0 = 1/2 for the constant kernel
    assert rep.s_B1C == pytest.approx(0.5, abs=1e-3)
    assert rep.s_A == pytest.approx(1.0, abs=1e-3)
    pred = homogeneous_closed_form(cfg)
    assert pred.varpi == pytest.approx(1.5, abs=1e-3)
    assert rep.s_A == pytest.approx(pred.predicted_s_A, abs=1e-7)


def test_truncated_birth_matches_scalar_root():
    cfg = make("2", "0.5", cutoff=2.0, kernel=CONSTANT, n_x=21, n_a=201)
    sigma = brentq(lambda s: 2 * (1 - math.exp(-2 * s)) - s, 0.5, 3.0, xtol=1e-14)
    assert solve_alpha_star(cfg) == pytest.approx(sigma - 0.5 - 1.0, abs=1e-7)
    assert solve_spectral_bound(cfg).s_A == pytest.approx(sigma - 0.5 - 0.5, abs=1e-7)


def test_report_diagnostics():
    cfg = make("2 - 2*x^2", "0.5", cutoff=2.0)
    rep = solve_spectral_bound(cfg)
    assert rep.s_A > rep.s_B1C
    assert rep.eigvec_age0.min() > 0 and rep.eigfun.min() > 0
    assert rep.residual_M < 1e-10 and rep.renewal_residual < 1e-10
    assert rep.r_M_at_s_A == pytest.approx(1.0, abs=1e-8)
    header, rows = rep.csv_rows()
    assert header == ("a", "x", "phi") and len(list(rows)) == 41 * 81


@given(l1=st.floats(-1.0, 3.0), l2=st.floats(-1.0, 3.0))
@settings(max_examples=25, deadline=None)
def test_next_generation_radius_decreases(l1, l2):
    cfg = make("2 - x^2", "0.5", cutoff=2.0, n_x=15, n_a=21)
    stack = compute_diffused_propagator(cfg)
    lo, hi = sorted((l1, l2))
    if hi - lo < 1e-6:
        return
    r = lambda l: spectral_radius(assemble_M_lambda(cfg, stack, l)).radius
    assert r(hi) < r(lo)


def test_next_generation_domain_error_on_infinite_horizon():
    cfg = make("2", "0.5", kernel=CONSTANT, n_x=11, n_a=41)
    stack = compute_diffused_propagator(cfg)
    with pytest.raises(DomainError):
        assemble_M_lambda(cfg, stack, -2.0)


def test_perturbation_radius_one_at_bound():
    cfg = make("2 - 2*x^2", "0.5", cutoff=2.0, n_x=41, n_a=81)
    rep = solve_spectral_bound(cfg)
    assert spectral_radius_F(cfg, rep.s_A) == pytest.approx(1.0, abs=1e-2)


def test_perturbation_radius_far_from_bound_matches_closed_form():
    # constant rates: r(F) = D r(K) / (lam + D + mu - beta) for lam above alpha**
    cfg = make("2", "0.5", kernel=CONSTANT, n_x=21, n_a=200)
    star = solve_alpha_star(cfg)
    lam = star + 1000.0
    assert spectral_radius_F(cfg, lam, alpha_star=star) == pytest.approx(0.5 / (lam + 1.5 - 2.0), rel=2e-2)


def test_perturbation_radius_decreases_in_lambda():
    cfg = make("2 - 2*x^2", "0.5", cutoff=2.0, n_x=21, n_a=41)
    star = solve_alpha_star(cfg)
    vals = [spectral_radius_F(cfg, star + d, alpha_star=star) for d in (0.1, 0.5, 2.0)]
    assert vals[0] > vals[1] > vals[2]
