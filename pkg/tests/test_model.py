import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from agespectra.expr import Expression, ExpressionError
from agespectra.io import load_scenario, save_scenario
from agespectra.model import (
    AssumptionError,
    KernelSpec,
    RateField,
    ScenarioConfig,
    ScenarioError,
    SpatialGrid,
    build_kernel_matrix,
    simpson_weights,
    survival_probability,
)
from agespectra.validation import reproduction_number, validate_assumptions
from agespectra.verification import scenario_path

from conftest import make


def test_expression_supports_whitelisted_calls():
    e = Expression("2 - 2*sqrt(abs(x)) + max(a, 0)^2")
    assert e(1.0, 0.25) == pytest.approx(2 - 1 + 1)
    out = e(np.zeros(3), np.array([0.0, 1.0, 0.04]))
    np.testing.assert_allclose(out, [2.0, 0.0, 1.6])


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "open('f')", "y + 1", "lambda: 1"])
def test_expression_rejects_everything_else(text):
    with pytest.raises(ExpressionError):
        Expression(text)


@pytest.mark.parametrize("profile", ["epanechnikov", "constant"])
def test_kernel_has_unit_mass(profile):
    k = KernelSpec(profile, radius=1.5)
    mass, _ = integrate.quad(lambda z: float(k(z)), -k.support, k.support, epsabs=1e-14)
    assert mass == pytest.approx(1.0, abs=1e-12)


@given(gamma=st.floats(0.05, 20.0), radius=st.floats(0.2, 3.0))
@settings(max_examples=40, deadline=None)
def test_scaled_kernel_keeps_unit_mass(gamma, radius):
    k = KernelSpec("epanechnikov", radius=radius, gamma=gamma)
    mass, _ = integrate.quad(lambda z: float(k(z)), -k.support, k.support, epsabs=1e-13)
    assert mass == pytest.approx(1.0, rel=1e-9)
    assert k.support == pytest.approx(radius * gamma)


@given(n=st.integers(3, 60), c=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
@settings(max_examples=50, deadline=None)
def test_simpson_weights_integrate_cubics_exactly(n, c):
    x = np.linspace(0.0, 2.0, n)
    w = simpson_weights(n, x[1] - x[0])
    poly = np.polynomial.Polynomial(c)
    exact = poly.integ()(2.0) - poly.integ()(0.0)
    assert w @ poly(x) == pytest.approx(exact, abs=1e-10)


def test_survival_probability_oracles():
    rates = RateField("2", "1")
    assert survival_probability(rates, 0.0, 1.0, 0.3) == pytest.approx(math.exp(-1), rel=1e-12)
    linear = RateField("2", "0.6*a")
    assert survival_probability(linear, 0.0, 2.0, 0.0) == pytest.approx(math.exp(-1.2), rel=1e-10)
    assert survival_probability(linear, 1.5, 1.5, 0.0) == 1.0
    with pytest.raises(ValueError):
        survival_probability(linear, 2.0, 1.0, 0.0)


def test_constant_kernel_principal_eigenvalue():
    # on (-1, 1) with density 1/4 the operator maps 1 to 1/2 everywhere
    grid = SpatialGrid.uniform(-1.0, 1.0, 51)
    K = build_kernel_matrix(KernelSpec("constant", radius=2.0), grid)
    np.testing.assert_allclose(K.row_sums, 0.5, rtol=1e-12)
    assert K.principal_eigenvalue == pytest.approx(0.5, abs=1e-12)


@given(n=st.integers(11, 80), radius=st.floats(0.3, 2.0))
@settings(max_examples=30, deadline=None)
def test_kernel_matrix_is_substochastic(n, radius):
    grid = SpatialGrid.uniform(-1.0, 1.0, n)
    if radius < grid.h:
        return
    K = build_kernel_matrix(KernelSpec("epanechnikov", radius=radius), grid)
    assert K.matrix.min() >= 0
    assert K.row_sums.max() <= 1 + 1e-12
    assert 0 < K.principal_eigenvalue < 1


def test_kernel_narrower_than_grid_is_rejected():
    grid = SpatialGrid.uniform(-1.0, 1.0, 11)
    with pytest.raises(ScenarioError):
        build_kernel_matrix(KernelSpec("epanechnikov", radius=0.05), grid)


def test_reproduction_number_oracle():
    # int_0^inf 2 exp(-1.5 a) da = 4/3
    cfg = make("2", "0.5", kernel=KernelSpec("constant", radius=2.0), n_a=400)
    assert cfg.age_grid.is_truncated
    assert reproduction_number(cfg, 0.0) == pytest.approx(4 / 3, abs=1e-3)


def test_beta_cutoff_sets_age_horizon():
    cfg = make(cutoff=2.0)
    assert cfg.age_grid.a_max == pytest.approx(2.0)
    assert not cfg.age_grid.is_truncated
    assert cfg.beta_grid[-1, 0] == 2.0


def test_nonpositive_diffusion_rate_rejected():
    with pytest.raises(ScenarioError, match="diffusion_rate"):
        make(D=0.0)


def test_validation_names_failed_assumption():
    cfg = load_scenario(scenario_path("broken_mu"))
    rep = validate_assumptions(cfg)
    assert not rep.ok
    assert [c.name for c in rep.failures] == ["mu.lower_bound"]
    with pytest.raises(AssumptionError, match="mu.lower_bound"):
        validate_assumptions(cfg, strict=True)


def test_validation_passes_shipped_reference():
    assert validate_assumptions(load_scenario(scenario_path("homogeneous"))).ok


def test_negative_fertility_reported():
    rep = validate_assumptions(make("1 - 2*x^2", cutoff=2.0))
    assert rep.check("beta.nonnegative").passed is False


def test_overrides_and_seed_precedence(monkeypatch):
    path = scenario_path("homogeneous")
    cfg = load_scenario(path, overrides=["rates.diffusion_rate=0.25", "solver.seed=5"])
    assert cfg.diffusion_rate == 0.25 and cfg.seed == 5
    monkeypatch.setenv("SPECTRA_SEED", "11")
    assert load_scenario(path, overrides=["solver.seed=5"]).seed == 11
    assert load_scenario(path, seed_override=3).seed == 3


def test_unknown_keys_warn_and_missing_keys_fail():
    cfg = load_scenario('[rates]\nbeta = "2"\nmu = "1"\nbogus = 1\n')
    assert any("bogus" in w for w in cfg.load_warnings)
    with pytest.raises(ScenarioError, match="rates.mu"):
        load_scenario('[rates]\nbeta = "2"\n')


def test_rate_table_scenario():
    table = "a,x,beta,mu\n0,-1,2,0.5\n0,1,2,0.5\n3,-1,2,0.5\n3,1,2,0.5\n"
    cfg = load_scenario({"domain": {"n_x": 21}, "age": {"n_a": 31, "a_hat": 3}, "rates": {"table": table}})
    np.testing.assert_allclose(cfg.beta_grid, 2.0)
    np.testing.assert_allclose(cfg.mu_grid, 0.5)


def test_scenario_round_trip(tmp_path):
    cfg = make("2 - x^2", "0.5 + 0.1*a", cutoff=2.5)
    save_scenario(cfg, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    np.testing.assert_array_equal(back.beta_grid, cfg.beta_grid)
    np.testing.assert_array_equal(back.mu_grid, cfg.mu_grid)
    assert back.to_dict() == cfg.to_dict()


def test_restricted_config_keeps_nodes():
    cfg = make(n_x=41)
    sub = cfg.restrict(-0.5, 0.5)
    assert set(np.round(sub.spatial_grid.nodes, 12)) <= set(np.round(cfg.spatial_grid.nodes, 12))
    assert sub.spatial_grid.length == pytest.approx(1.0)
