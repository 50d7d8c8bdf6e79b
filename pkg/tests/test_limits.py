import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agespectra.limits import (
    check_monotonicity_properties,
    radial_nondecreasing_mu,
    random_mu_perturbation,
    sweep_diffusion_rate,
    sweep_kernel_scaling,
    undiffused_bound,
)
from agespectra.model import ScenarioError

from conftest import make


def test_diffusion_sweep_table_and_claims():
    cfg = make("2 - 2*x^2", cutoff=2.0)
    t = sweep_diffusion_rate(cfg, [0.01, 0.1, 1.0, 10.0])
    header, rows = t.csv_rows()
    assert header == ("param", "s_A", "s_B1C", "verdict", "gap") and len(rows) == 4
    assert t.verdict("large_D_upper_bound")["passed"]
    assert t.verdict("lower_bound")["passed"]
    assert t.gaps[0] < 0.02
    assert all(b < a for a, b in zip(t.s_A, t.s_A[1:]))


def test_diffusion_sweep_rejects_nonpositive_rate():
    with pytest.raises(ScenarioError):
        sweep_diffusion_rate(make(cutoff=2.0), [0.0, 1.0])


def test_diffusion_sweep_parallel_matches_serial():
    cfg = make("2 - x^2", cutoff=2.0, n_x=21, n_a=41)
    a = sweep_diffusion_rate(cfg, [0.5, 2.0], jobs=1)
    b = sweep_diffusion_rate(cfg, [2.0, 0.5], jobs=2)
    assert a.s_A == b.s_A and a.values == b.values


def test_long_range_dispersal_with_free_cost():
    cfg = make("2", "0.5", cutoff=2.0, D=0.5, n_x=41)
    t = sweep_kernel_scaling(cfg, [1, 4, 16], 0)
    assert t.reference_limit == pytest.approx(undiffused_bound(cfg) - 0.5)
    assert t.verdict("large_gamma_limit")["passed"]


def test_short_range_dispersal_limit():
    cfg = make("2 - 0.2*x^2", "0.5", cutoff=2.0, D=0.1, n_x=81)
    t = sweep_kernel_scaling(cfg, [1, 0.5, 0.25], 1.0)
    assert t.verdict("small_gamma_limit")["passed"]


def test_kernel_inside_one_cell_is_rejected():
    with pytest.raises(ScenarioError, match="increase domain.n_x"):
        sweep_kernel_scaling(make(cutoff=2.0, n_x=11), [0.05], 0)


def test_radial_mortality_predicate():
    assert radial_nondecreasing_mu(make(mu="0.5 + x^2"))
    assert not radial_nondecreasing_mu(make(mu="0.5 + x"))
    assert not radial_nondecreasing_mu(make(mu="1.5 - x^2"))


@given(eps=st.floats(1e-3, 0.5), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_random_perturbation_sup_norm(eps, seed):
    cfg = make(cutoff=2.0, n_x=11, n_a=11)
    pert = random_mu_perturbation(cfg, eps, np.random.default_rng(seed))
    a, x = np.meshgrid(np.linspace(0, 2, 11), np.linspace(-1, 1, 11), indexing="ij")
    vals = pert(a, x)
    assert np.abs(vals).max() == pytest.approx(eps, rel=1e-12)


def test_monotonicity_properties_small_grid():
    cfg = make("2 - 2*x^2", "0.5", cutoff=2.0, n_x=41, n_a=41)
    rep = check_monotonicity_properties(cfg, {"lipschitz_trials": 4})
    assert rep.passed
    assert {c["property"] for c in rep.checks} >= {"beta_monotone", "mu_monotone", "mu_lipschitz", "nested_domain"}
    nested = rep.named("nested_domain")[0]
    assert 0 <= nested["difference"] <= nested["bound"]
