"""Existence and nonexistence diagnostics for the principal eigenpair."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar

from .evolution import PropagatorStack, compute_diffused_propagator, step_matrices
from .model import ScenarioConfig
from .spectral import (
    SpectralError,
    SpectralReport,
    alpha_of_x_profile,
    assemble_M_lambda,
    evaluate_characteristic,
    solve_alpha_star,
    solve_spectral_bound,
    spectral_radius,
    spectral_radius_F,
)

DIVERGENCE_SLOPE = 0.3
CONVERGENCE_SLOPE = 0.1


@dataclass
class IntegrabilityVerdict:
    integrand_name: str
    refinement_levels: list
    slope: float
    verdict: str
    hotspot: int
    singular_measure: list = field(default_factory=list)

    @property
    def diverges(self) -> bool:
        return self.verdict == "diverges"

    def to_dict(self):
        return {
            "integrand_name": self.integrand_name,
            "refinement_levels": [[n, v] for n, v in self.refinement_levels],
            "slope": self.slope,
            "verdict": self.verdict,
            "hotspot": self.hotspot,
            "singular_measure": self.singular_measure,
        }

    def csv_rows(self):
        return ("level", "n_x", "integral"), [(i, n, v) for i, (n, v) in enumerate(self.refinement_levels)]


def _refined_integrals(config, gap_fn, name, levels=4):
    tol = config.tolerances.root_tol
    sing_tol = 10 * tol
    out, measures = [], []
    hotspot = 0
    for level in range(levels):
        cfg = config if level == 0 else config.replace(n_x=(config.spatial_grid.n_x - 1) * 2**level + 1)
        gap = gap_fn(cfg)
        if gap.min() < -tol:
            i = int(np.argmin(gap))
            raise SpectralError(f"{name}: negative gap {gap[i]:.3g} at node {i}; the diffusion-free bound is inconsistent")
        w = cfg.spatial_grid.quad_weights
        singular = gap <= sing_tol
        if level == 0:
            hotspot = int(np.argmin(gap))
        measures.append(float(w[singular].sum()))
        out.append((cfg.spatial_grid.n_x, float(np.sum(w[~singular] / gap[~singular]))))
    h_fine = config.spatial_grid.h / 2 ** (levels - 1)
    if measures[-1] > 4 * h_fine and measures[-1] >= 0.5 * measures[0]:
        # singular set of positive measure: integrand is infinite there
        return IntegrabilityVerdict(name, [(n, math.inf) for n, _ in out], math.inf, "diverges", hotspot, measures)
    ns = np.array([n for n, _ in out], float)
    vals = np.array([v for _, v in out])
    if np.any(vals <= 0):
        return IntegrabilityVerdict(name, out, 0.0, "converges", hotspot, measures)
    slope = float(np.polyfit(np.log(ns), np.log(vals), 1)[0])
    monotone = bool(np.all(np.diff(vals) > 0))
    if slope > DIVERGENCE_SLOPE and monotone:
        verdict = "diverges"
    elif slope < CONVERGENCE_SLOPE:
        verdict = "converges"
    else:
        verdict = "inconclusive"
    return IntegrabilityVerdict(name, out, slope, verdict, hotspot, measures)


def check_criterion_I(config: ScenarioConfig, levels: int = 4) -> IntegrabilityVerdict:
    """Refinement study of ``int dx / (1 - G_{alpha**}(x))``."""
    if not math.isfinite(config.envelopes()["mu_max"]):
        raise ValueError("criterion I needs bounded mortality")

    def gap(cfg):
        return 1.0 - evaluate_characteristic(cfg, solve_alpha_star(cfg)).values

    return _refined_integrals(config, gap, "1/(1-G)", levels)


def check_criterion_II(config: ScenarioConfig, levels: int = 4) -> IntegrabilityVerdict:
    """Refinement study of ``int dx / (alpha** - alpha(x))``; needs a fertility cutoff."""
    if config.rate_field.beta_cutoff_age is None:
        raise ValueError("criterion II needs rates.beta_cutoff_age")

    def gap(cfg):
        prof = alpha_of_x_profile(cfg)
        star = solve_alpha_star(cfg)
        g = star - prof.values
        return np.where(prof.has_root, g, np.inf)

    return _refined_integrals(config, gap, "1/(alpha**-alpha(x))", levels)


# ---------------------------------------------------------------- nonexistence


@dataclass
class NonexistenceReport:
    applicable: bool
    reason: str = ""
    test_value: float = math.nan
    predicted_nonexistence: bool = False
    r_F_samples: list = field(default_factory=list)
    signature_a: bool | None = None
    localization: list = field(default_factory=list)
    signature_b: bool | None = None
    gap_refinement: list = field(default_factory=list)

    @property
    def fired(self) -> bool:
        return bool(self.predicted_nonexistence and self.signature_a and self.signature_b)

    def to_dict(self):
        return {
            "applicable": self.applicable,
            "reason": self.reason,
            "test_value": self.test_value,
            "predicted_nonexistence": self.predicted_nonexistence,
            "r_F_samples": [[l, r] for l, r in self.r_F_samples],
            "signature_a": self.signature_a,
            "localization": self.localization,
            "signature_b": self.signature_b,
            "gap_refinement": self.gap_refinement,
        }


def localization_index(vec, weights) -> float:
    """``(sum w v^4)(sum w) / (sum w v^2)^2``: about 1 when spread out, grows as ``v`` concentrates."""
    v2 = vec * vec
    return float((weights @ (v2 * v2)) * weights.sum() / (weights @ v2) ** 2)


def _shape_gate(config: ScenarioConfig):
    ker = config.kernel_spec
    grid = config.spatial_grid
    if ker.profile != "constant" or ker.support < grid.length * (1 - 1e-12):
        return "kernel is not constant over the domain"
    if config.rate_field.beta_cutoff_age is not None or not config.is_infinite_horizon:
        return "needs an unbounded age horizon without fertility cutoff"
    b = config.beta_grid
    if not np.allclose(b, b[:1], rtol=1e-12, atol=0):
        return "fertility depends on age"
    m = config.mu_grid
    if not np.allclose(m, m.flat[0], rtol=1e-12, atol=0):
        return "mortality is not constant"
    return None


def _test_integral(beta_fn, lower, upper):
    xs = np.linspace(lower, upper, 20001)
    vals = beta_fn(xs)
    i = int(np.argmax(vals))
    bmax = float(vals[i])
    # refine the maximiser between neighbouring samples
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    res = minimize_scalar(lambda t: -float(beta_fn(t)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-14})
    if -res.fun > bmax:
        bmax, xstar = float(-res.fun), float(res.x)
    else:
        xstar = float(xs[i])
    if np.mean(vals >= bmax - 1e-12) > 1e-3:
        return math.inf, xstar, "maximum attained on a set of positive measure"

    g = lambda t: 1.0 / (bmax - float(beta_fn(t)))

    def piece(a, b):
        if b <= a:
            return 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            return integrate.quad(g, a, b, limit=500, epsabs=1e-13, epsrel=1e-11)[0]

    # integral away from the maximiser, then shells shrinking tenfold towards it
    outer = piece(lower, xstar - 1e-2) + piece(xstar + 1e-2, upper)
    shells = [
        piece(xstar - 10.0**-k, xstar - 10.0 ** -(k + 1)) + piece(xstar + 10.0 ** -(k + 1), xstar + 10.0**-k)
        for k in range(2, 7)
    ]
    ratio = shells[-1] / shells[-2] if shells[-2] > 0 else 0.0
    if ratio >= 0.5:
        return math.inf, xstar, "integral diverges at the maximiser"
    return outer + sum(shells) + shells[-1] * ratio / (1 - ratio), xstar, ""


def detect_nonexistence(config: ScenarioConfig, *, n_lambda: int = 12, window: float = 2.0, gap: float = 0.02) -> NonexistenceReport:
    """Scalar test for the constant-kernel scenario plus two discrete corroborations.

    (a) ``r(F_lambda)`` stays below ``1 - gap`` over ``(alpha**, alpha** + window]``;
    (b) the Perron vector of ``M`` at the discrete bound concentrates at least
    twice as much after one grid refinement.
    """
    reason = _shape_gate(config)
    if reason:
        return NonexistenceReport(False, reason)
    rho = float(config.kernel_spec(0.0))
    grid = config.spatial_grid
    beta_fn = lambda t: config.rate_field.beta_values(0.0, t)
    integral, _, note = _test_integral(beta_fn, grid.lower, grid.upper)
    value = rho * integral if math.isfinite(integral) else math.inf
    rep = NonexistenceReport(True, note, value, bool(value < 1))
    if not rep.predicted_nonexistence:
        return rep

    star = solve_alpha_star(config)
    # open at the left end: the first sample sits one step inside the window
    lams = star + 0.01 + (window - 0.01) * np.arange(1, n_lambda + 1) / n_lambda
    rep.r_F_samples = [(float(l), spectral_radius_F(config, l, alpha_star=star)) for l in lams]
    rep.signature_a = max(r for _, r in rep.r_F_samples) < 1 - gap

    for cfg in (config, config.replace(n_x=2 * grid.n_x)):
        stack = compute_diffused_propagator(cfg)
        report = solve_spectral_bound(cfg, stack)
        idx = localization_index(report.eigvec_age0, cfg.spatial_grid.quad_weights)
        rep.localization.append({"n_x": cfg.spatial_grid.n_x, "index": idx})
        rep.gap_refinement.append({"n_x": cfg.spatial_grid.n_x, "s_A_minus_s_B1C": report.s_A - report.s_B1C})
        del stack
    rep.signature_b = rep.localization[1]["index"] >= 2.0 * rep.localization[0]["index"]
    return rep


# ---------------------------------------------------------------- generalized eigenvalues


@dataclass
class GPEReport:
    lower: float
    upper: float
    sub_passed: bool
    super_passed: bool
    sub_violation_node: int | None
    super_violation_node: int | None
    sub_margin: float
    super_margin: float
    interior_residual: float

    @property
    def passed(self) -> bool:
        return self.sub_passed and self.super_passed

    def to_dict(self):
        return dict(self.__dict__, passed=self.passed)


def _boundary_defect(config, stack, phi0, lam):
    """``phi(0) - int beta phi`` for the test field ``exp(-lam a) U(0,a) phi(0)``."""
    return phi0 - assemble_M_lambda(config, stack, lam) @ phi0


def _interior_defect(config, stack, phi0, lam):
    ag = config.age_grid
    field_ = np.exp(-lam * ag.nodes)[:, None] * np.einsum("kxy,y->kx", stack.matrices, phi0)
    steps = step_matrices(config, stack.kernel.matrix, stack.diffusion_rate)
    worst = 0.0
    for k, E in enumerate(steps):
        r = field_[k + 1] - math.exp(-lam * ag.h) * (E @ field_[k])
        worst = max(worst, float(np.abs(r).max() / max(np.abs(field_[k + 1]).max(), 1e-300)))
    return worst


def verify_generalized_eigenvalue(
    config: ScenarioConfig,
    report: SpectralReport,
    *,
    eps: float | None = None,
    stack: PropagatorStack | None = None,
    sub_lambda: float | None = None,
    super_lambda: float | None = None,
) -> GPEReport:
    """Certify ``lambda0 - eps <= lambda_p`` and ``lambda_p' <= lambda0 + eps`` with test pairs.

    The test field is ``exp(-lambda a) U(0,a) phi(0)`` built from the computed
    principal vector.  It solves the age equation exactly, so the sign of the
    renewal defect decides each inequality.
    """
    if config.rate_field.beta_cutoff_age is None:
        raise ValueError("generalized eigenvalue check needs rates.beta_cutoff_age")
    phi0 = report.eigvec_age0
    if not np.all(report.eigfun > 0) or not np.all(phi0 > 0):
        raise SpectralError("eigenfunction is not strictly positive; cannot build test pairs")
    stack = stack or compute_diffused_propagator(config)
    eps = 100 * config.tolerances.root_tol if eps is None else float(eps)
    lo = report.s_A - eps if sub_lambda is None else float(sub_lambda)
    hi = report.s_A + eps if super_lambda is None else float(super_lambda)
    slack = 100 * config.tolerances.power_iter_tol
    sub = _boundary_defect(config, stack, phi0, lo)
    sup = _boundary_defect(config, stack, phi0, hi)
    sub_bad = np.flatnonzero(sub > slack)
    sup_bad = np.flatnonzero(sup < -slack)
    interior = max(_interior_defect(config, stack, phi0, lo), _interior_defect(config, stack, phi0, hi))
    ok_interior = interior <= 1e-10
    return GPEReport(
        lower=lo,
        upper=hi,
        sub_passed=bool(not sub_bad.size and ok_interior),
        super_passed=bool(not sup_bad.size and ok_interior),
        sub_violation_node=int(sub_bad[np.argmax(sub[sub_bad])]) if sub_bad.size else None,
        super_violation_node=int(sup_bad[np.argmin(sup[sup_bad])]) if sup_bad.size else None,
        sub_margin=float(sub.max()),
        super_margin=float(sup.min()),
        interior_residual=interior,
    )


# ---------------------------------------------------------------- maximum principle


@dataclass
class MaxPrincipleReport:
    s_A: float
    status: str
    trials: int = 0
    positive_trials: int = 0
    min_values: list = field(default_factory=list)
    violation: dict | None = None
    zero_field_passes: bool = True

    @property
    def holds(self) -> bool:
        return self.status == "holds" and self.positive_trials == self.trials

    def to_dict(self):
        return dict(self.__dict__, holds=self.holds)


def solve_at_zero(config: ScenarioConfig, stack: PropagatorStack, eta, source) -> np.ndarray:
    """Field ``u`` with ``u(0) - int beta u = eta`` and ``du/da - D(K-I)u + mu u = source``.

    Needs a negative growth bound so that ``I - M(0)`` has a nonnegative inverse.
    """
    steps = step_matrices(config, stack.kernel.matrix, stack.diffusion_rate)
    h = config.age_grid.h
    v = np.zeros_like(source)
    for k, E in enumerate(steps):
        v[k + 1] = E @ (v[k] + 0.5 * h * source[k]) + 0.5 * h * source[k + 1]
    ag = config.age_grid
    rhs = ag.weights @ (config.beta_grid * v) + eta
    M0 = assemble_M_lambda(config, stack, 0.0)
    u0 = np.linalg.solve(np.eye(len(eta)) - M0, rhs)
    return np.einsum("kxy,y->kx", stack.matrices, u0) + v


def verify_strong_max_principle(
    config: ScenarioConfig,
    report: SpectralReport,
    trials: int = 50,
    *,
    stack: PropagatorStack | None = None,
    seed: int | None = None,
) -> MaxPrincipleReport:
    """Probe the strong maximum principle on the sign of the growth bound.

    Negative bound: random admissible fields (built from nonpositive data
    drawn in ``[-1, 0)``) must be strictly positive.  Positive bound: the
    negated eigenfunction is admissible and negative, which is reported.
    """
    if config.rate_field.beta_cutoff_age is None:
        raise ValueError("maximum principle check needs rates.beta_cutoff_age")
    s = report.s_A
    if abs(s) <= config.tolerances.root_tol:
        return MaxPrincipleReport(s, "critical")
    if s > 0:
        u = -report.eigfun
        # A(-phi) = -s phi <= 0 while -phi < 0 everywhere
        k, i = np.unravel_index(np.argmin(u), u.shape)
        return MaxPrincipleReport(
            s,
            "violated",
            violation={
                "field": "negated principal eigenfunction",
                "min_value": float(u.min()),
                "age_index": int(k),
                "x_index": int(i),
                "generator_image_max": float((-s * report.eigfun).max()),
            },
        )
    stack = stack or compute_diffused_propagator(config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n_a, n_x = config.age_grid.n_a, config.spatial_grid.n_x
    mins = []
    for _ in range(trials):
        eta_neg = rng.uniform(-1.0, 0.0, n_x)
        src_neg = rng.uniform(-1.0, 0.0, (n_a, n_x))
        u = solve_at_zero(config, stack, -eta_neg, -src_neg)
        mins.append(float(u.min()))
    positive = sum(m > 0 for m in mins)
    return MaxPrincipleReport(s, "holds", trials, positive, mins)
