import math

import numpy as np
import pytest

from agespectra.criteria import (
    _test_integral,
    check_criterion_I,
    check_criterion_II,
    detect_nonexistence,
    localization_index,
    verify_generalized_eigenvalue,
    verify_strong_max_principle,
)
from agespectra.evolution import compute_diffused_propagator
from agespectra.model import KernelSpec
from agespectra.spectral import solve_spectral_bound

from conftest import make

CONSTANT = KernelSpec("constant", radius=2.0)


@pytest.mark.parametrize(
    "beta, expected",
    [
        (lambda x: 2 - 2 * np.sqrt(np.abs(x)), 2.0),  # int dx / (2 sqrt|x|) over (-1, 1)
        (lambda x: 2 - 2 * np.abs(x) ** 0.25, 4 / 3),
        (lambda x: 2 - 2 * x**2, math.inf),
        (lambda x: 2 - 2 * np.maximum(np.abs(x) - 0.5, 0), math.inf),
    ],
)
def test_scalar_test_integral(beta, expected):
    value, _, _ = _test_integral(beta, -1.0, 1.0)
    if math.isinf(expected):
        assert math.isinf(value)
    else:
        assert value == pytest.approx(expected, rel=1e-4)


def test_criterion_I_plateau_diverges():
    v = check_criterion_I(make("2 - 2*max(abs(x) - 0.5, 0)", n_a=200))
    assert v.verdict == "diverges"
    header, rows = v.csv_rows()
    assert header == ("level", "n_x", "integral") and len(rows) == 4


def test_criterion_I_square_root_cusp_converges():
    assert check_criterion_I(make("2 - 2*sqrt(abs(x))", n_a=200)).verdict == "converges"


def test_criterion_II_quadratic_peak_diverges():
    v = check_criterion_II(make("2 - 2*x^2", cutoff=2.0))
    assert v.diverges and v.slope > 0.3


def test_criterion_II_needs_cutoff():
    with pytest.raises(ValueError):
        check_criterion_II(make())


def test_localization_index_scale():
    w = np.full(100, 0.01)
    assert localization_index(np.ones(100), w) == pytest.approx(1.0)
    spike = np.zeros(100)
    spike[50] = 1
    assert localization_index(spike, w) == pytest.approx(100.0)


def test_nonexistence_needs_constant_kernel():
    rep = detect_nonexistence(make("2 - 2*sqrt(abs(x))"))
    assert not rep.applicable and not rep.fired


def test_nonexistence_scalar_test_on_cusp():
    rep = detect_nonexistence(make("2 - 2*sqrt(abs(x))", kernel=CONSTANT, n_x=41, n_a=200), n_lambda=3)
    assert rep.test_value == pytest.approx(0.5, abs=1e-3)
    assert rep.predicted_nonexistence and rep.signature_a


def test_quadratic_peak_has_no_nonexistence_prediction():
    rep = detect_nonexistence(make("2 - 2*x^2", kernel=CONSTANT, n_x=21, n_a=200))
    assert math.isinf(rep.test_value) and not rep.predicted_nonexistence


@pytest.fixture(scope="module")
def positive_case():
    cfg = make("2", "0.5", cutoff=2.0, kernel=CONSTANT, n_x=31, n_a=81)
    stack = compute_diffused_propagator(cfg)
    return cfg, stack, solve_spectral_bound(cfg, stack)


def test_generalized_eigenvalue_sandwich(positive_case):
    cfg, stack, rep = positive_case
    assert verify_generalized_eigenvalue(cfg, rep, stack=stack).passed
    assert verify_generalized_eigenvalue(cfg, rep, stack=stack, eps=0.0).passed


def test_generalized_eigenvalue_rejects_wrong_value(positive_case):
    cfg, stack, rep = positive_case
    bad = verify_generalized_eigenvalue(cfg, rep, stack=stack, sub_lambda=rep.s_A + 0.5)
    assert not bad.sub_passed and bad.sub_violation_node is not None


def test_max_principle_violated_for_positive_bound(positive_case):
    cfg, stack, rep = positive_case
    res = verify_strong_max_principle(cfg, rep, stack=stack)
    assert res.status == "violated" and res.violation["min_value"] < 0


def test_max_principle_holds_for_negative_bound():
    cfg = make("2", "2", cutoff=2.0, kernel=CONSTANT, n_x=31, n_a=81)
    stack = compute_diffused_propagator(cfg)
    rep = solve_spectral_bound(cfg, stack)
    assert rep.s_A < 0
    res = verify_strong_max_principle(cfg, rep, 20, stack=stack, seed=1)
    assert res.holds and res.positive_trials == 20 and min(res.min_values) > 0
