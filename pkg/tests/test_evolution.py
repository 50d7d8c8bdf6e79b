import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from agespectra.evolution import (
    apply_propagator,
    compute_diffused_propagator,
    load_stack,
    restart_propagator,
    save_stack,
)
from agespectra.model import build_kernel_matrix

from conftest import make


def test_age_independent_mortality_matches_matrix_exponential():
    cfg = make("2", "0.7", cutoff=2.0, n_x=21, n_a=41, D=1.3)
    stack = compute_diffused_propagator(cfg)
    K = build_kernel_matrix(cfg.kernel_spec, cfg.spatial_grid).matrix
    gen = 1.3 * (K - np.eye(21)) - 0.7 * np.eye(21)
    np.testing.assert_allclose(stack[-1], expm(2.0 * gen), rtol=1e-11, atol=1e-14)


def test_zero_diffusion_is_pure_survival():
    cfg = make("2", "0.5 + x^2", cutoff=2.0, n_x=21, n_a=81).replace(diffusion_rate=0.0)
    stack = compute_diffused_propagator(cfg)
    last = stack[-1]
    np.testing.assert_allclose(last, np.diag(np.diag(last)))
    np.testing.assert_allclose(np.diag(last), np.exp(-2 * (0.5 + cfg.spatial_grid.nodes**2)), rtol=1e-12)


@given(D=st.floats(0.05, 5.0), mu=st.floats(0.1, 2.0))
@settings(max_examples=20, deadline=None)
def test_propagator_is_positive_and_leaks_mass(D, mu):
    cfg = make("1", f"{mu!r} + 0.3*x^2", cutoff=1.0, n_x=15, n_a=21, D=D)
    stack = compute_diffused_propagator(cfg)
    assert stack.matrices.min() >= 0
    # rows of K sum to at most one, so the sup norm is bounded by the death rate alone
    bound = np.exp(-mu * stack.ages) * (1 + 1e-12)
    assert np.all(stack.row_norms() <= bound)


def test_restart_composes_with_initial_segment():
    cfg = make("2", "0.5 + 0.2*a*x^2", cutoff=2.0, n_x=21, n_a=41)
    stack = compute_diffused_propagator(cfg)
    middle = restart_propagator(cfg, stack, 10, 30)
    np.testing.assert_allclose(middle @ stack[10], stack[30], rtol=1e-12, atol=1e-15)


def test_apply_propagator_bounds():
    cfg = make(cutoff=2.0, n_x=11, n_a=11)
    stack = compute_diffused_propagator(cfg)
    v = np.linspace(0, 1, 11)
    np.testing.assert_allclose(apply_propagator(stack, 5, v), stack[5] @ v)
    with pytest.raises(IndexError):
        apply_propagator(stack, 11, v)


def test_stack_file_round_trip(tmp_path):
    cfg = make(cutoff=2.0, n_x=11, n_a=9)
    stack = compute_diffused_propagator(cfg)
    save_stack(stack, tmp_path / "u.bin")
    raw = (tmp_path / "u.bin").read_bytes()
    assert len(raw) == 16 + 8 * 9 * 11 * 11
    back = load_stack(tmp_path / "u.bin", stack.ages)
    np.testing.assert_array_equal(back.matrices, stack.matrices)
