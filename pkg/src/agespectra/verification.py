"""Acceptance suite and quick per-scenario checks.

Every criterion returns a :class:`CriterionResult` whose ``details`` hold only
deterministic numbers, so two runs with the same seed serialise identically.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib.resources import files

import numpy as np
from scipy.optimize import brentq

from . import criteria, limits, simulate, spectral
from .evolution import compute_diffused_propagator
from .io import dumps_report, load_scenario
from .model import KernelSpec, RateField, ScenarioConfig
from .validation import validate_assumptions

SCENARIO_NAMES = (
    "homogeneous",
    "homogeneous_infinite",
    "decay",
    "counterexample",
    "plateau",
    "x2_gap",
    "scaling_wide",
    "scaling_narrow",
    "radial_mu",
    "broken_mu",
)


def scenario_path(name: str):
    if name not in SCENARIO_NAMES:
        raise KeyError(f"unknown shipped scenario {name!r}")
    return files("agespectra") / "scenarios" / f"{name}.toml"


def shipped_scenario(name: str, *, overrides=None, seed=None) -> ScenarioConfig:
    return load_scenario(scenario_path(name).read_text(), overrides=overrides, seed_override=seed)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": self.passed, "details": self.details, "error": self.error}

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.error})" if self.error else ""
        return f"[{tag}] {self.number:>2} {self.name}{extra}"


@dataclass
class SuiteReport:
    suite: str
    seed: int
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def result(self, number: int) -> CriterionResult:
        return next(r for r in self.results if r.number == number)

    def to_dict(self):
        return {
            "suite": self.suite,
            "seed": self.seed,
            "passed": self.passed,
            "results": [r.to_dict() for r in self.results],
        }

    def csv_rows(self):
        return ("number", "name", "passed"), [(r.number, r.name, "pass" if r.passed else "fail") for r in self.results]


def _rng(seed: int, number: int) -> np.random.Generator:
    # independent stream per criterion, so running a subset changes nothing
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(number)]))


def random_scenario(rng: np.random.Generator, *, n_x: int = 200, n_a: int = 200, seed: int = 0) -> ScenarioConfig:
    """Quadratic fertility peak and mortality well with births before a finite age."""
    b0 = round(float(rng.uniform(1.5, 3.0)), 3)
    b2 = round(float(rng.uniform(0.2, 0.9)) * b0, 3)
    m0 = round(float(rng.uniform(0.3, 1.0)), 3)
    m2 = round(float(rng.uniform(0.0, 1.0)), 3)
    D = round(float(rng.uniform(0.2, 2.0)), 3)
    radius = round(float(rng.uniform(0.5, 1.5)), 3)
    cutoff = round(float(rng.uniform(1.5, 3.0)), 3)
    return ScenarioConfig.build(
        n_x=n_x,
        n_a=n_a,
        kernel=KernelSpec("epanechnikov", radius=radius),
        rates=RateField(f"{b0} - {b2}*x^2", f"{m0} + {m2}*x^2", beta_cutoff_age=cutoff),
        diffusion_rate=D,
        seed=seed,
    )


def _describe(config: ScenarioConfig) -> dict:
    src = config.rate_field.source()
    return {
        "beta": src.get("beta"),
        "mu": src.get("mu"),
        "cutoff": src.get("beta_cutoff_age"),
        "D": config.diffusion_rate,
        "kernel_radius": config.kernel_spec.radius,
    }


# ---------------------------------------------------------------- criteria


def c01_homogeneous_identity(seed, jobs):
    cfg = shipped_scenario("homogeneous_infinite", seed=seed)
    rep = spectral.solve_spectral_bound(cfg)
    # Lotka root of 2/(s + 0.5) = 1 and 1 - r(K) with r(K) = |Omega| / 4
    varpi, lam0 = 1.5, 0.5
    d1, d2 = abs(rep.s_B1C - (varpi - 1.0)), abs(rep.s_A - (varpi - lam0))
    return d1 <= 1e-3 and d2 <= 1e-3, {
        "s_B1C": rep.s_B1C,
        "s_A": rep.s_A,
        "target_s_B1C": varpi - 1.0,
        "target_s_A": varpi - lam0,
        "lambda0_K": rep.lambda0_K,
        "error_s_B1C": d1,
        "error_s_A": d2,
    }


def c02_truncated_birth(seed, jobs):
    cfg = shipped_scenario("homogeneous", seed=seed)
    rep = spectral.solve_spectral_bound(cfg)
    # the scalar equation is in sigma = varpi + mu
    sigma = brentq(lambda s: 2 * (1 - math.exp(-2 * s)) - s, 0.5, 3.0, xtol=1e-14)
    varpi = sigma - 0.5
    err = abs(rep.s_A - (varpi - 0.5))
    return err <= 2e-3, {"s_A": rep.s_A, "varpi": varpi, "target": varpi - 0.5, "error": err}


def c03_log_convexity(seed, jobs):
    rng = _rng(seed, 3)
    rows, ok = [], True
    for _ in range(5):
        cfg = random_scenario(rng, seed=seed)
        stack = compute_diffused_propagator(cfg)
        rep = spectral.solve_spectral_bound(cfg, stack)
        lams = rep.s_A + np.linspace(-0.5, 1.5, 12)
        tol = cfg.tolerances
        radii = np.array(
            [spectral.spectral_radius(spectral.assemble_M_lambda(cfg, stack, l), tol.power_iter_tol, tol.max_iters).radius for l in lams]
        )
        logs = np.log(radii)
        second = logs[:-2] - 2 * logs[1:-1] + logs[2:]
        decreasing = bool(np.all(np.diff(radii) < 0))
        slack = float(-second.min()) if second.size else 0.0
        good = decreasing and slack <= 1e-6
        ok &= good
        rows.append({**_describe(cfg), "decreasing": decreasing, "max_convexity_violation": max(slack, 0.0), "passed": good})
    return ok, {"scenarios": rows}


def c04_ordering(seed, jobs):
    rng = _rng(seed, 4)
    rows, ok = [], True
    for _ in range(20):
        cfg = random_scenario(rng, seed=seed)
        rep = spectral.solve_spectral_bound(cfg)
        good = rep.s_A >= rep.s_B1C - cfg.tolerances.root_tol
        ok &= good
        rows.append({**_describe(cfg), "s_A": rep.s_A, "s_B1C": rep.s_B1C, "passed": bool(good)})
    return ok, {"scenarios": rows}


def c05_perturbation_radius(seed, jobs):
    rng = _rng(seed, 5)
    rows, ok, attempts = [], True, 0
    while len(rows) < 5 and attempts < 50:
        attempts += 1
        cfg = random_scenario(rng, seed=seed)
        rep = spectral.solve_spectral_bound(cfg)
        if not rep.s_A > rep.s_B1C + 10 * cfg.tolerances.root_tol:
            continue
        r = spectral.spectral_radius_F(cfg, rep.s_A, alpha_star=rep.s_B1C)
        good = abs(r - 1) <= 1e-2
        ok &= good
        rows.append({**_describe(cfg), "s_A": rep.s_A, "s_B1C": rep.s_B1C, "r_F": r, "passed": bool(good)})
    ok &= len(rows) == 5
    cex = shipped_scenario("counterexample", seed=seed)
    star = spectral.solve_alpha_star(cex)
    lams = star + 0.01 + 1.99 * np.arange(1, 13) / 12
    samples = [spectral.spectral_radius_F(cex, l, alpha_star=star) for l in lams]
    ok &= max(samples) <= 0.98
    return ok, {"existence_scenarios": rows, "counterexample_max_r_F": max(samples), "counterexample_lambdas": lams.tolist()}


def c06_counterexample(seed, jobs):
    cfg = shipped_scenario("counterexample", seed=seed)
    rep = criteria.detect_nonexistence(cfg)
    ok = abs(rep.test_value - 0.5) <= 1e-3 and bool(rep.signature_a) and bool(rep.signature_b)
    d = rep.to_dict()
    return ok, {k: d[k] for k in ("test_value", "signature_a", "signature_b", "localization", "gap_refinement")}


def c07_criteria_coherence(seed, jobs):
    out, ok = {}, True
    for name, check in (("plateau", criteria.check_criterion_I), ("x2_gap", criteria.check_criterion_II)):
        cfg = shipped_scenario(name, seed=seed)
        verdict = check(cfg)
        rep = spectral.solve_spectral_bound(cfg)
        min_node = float(rep.eigfun.min())
        good = verdict.diverges and min_node > 0 and rep.s_A > rep.s_B1C
        ok &= good
        out[name] = {"verdict": verdict.verdict, "slope": verdict.slope, "eigfun_min": min_node, "s_A": rep.s_A, "s_B1C": rep.s_B1C}
    return ok, out


def c08_diffusion_limits(seed, jobs):
    cfg = shipped_scenario("x2_gap", seed=seed)
    small = limits.sweep_diffusion_rate(cfg, [0.64, 0.16, 0.04, 0.01], jobs=jobs)
    large = limits.sweep_diffusion_rate(cfg, [4, 16, 64], jobs=jobs)
    gaps_down = small.gaps[::-1]
    mono = all(b < a for a, b in zip(gaps_down, gaps_down[1:]))
    lam0, lam1 = large.extra["lambda0_K"], large.extra["lambda1_envelope"]
    excess = [s - (-d * lam0 + lam1) for d, s in zip(large.values, large.s_A)]
    dec = all(b < a for a, b in zip(large.s_A, large.s_A[1:]))
    ok = mono and small.gaps[0] <= 5e-2 and max(excess) <= 1e-3 and dec
    return ok, {
        "small_D": {"values": small.values, "s_A": small.s_A, "gaps": small.gaps, "monotone": mono},
        "large_D": {"values": large.values, "s_A": large.s_A, "excess_over_bound": excess, "strictly_decreasing": dec},
        "s_B1C": small.reference_limit,
    }


def c09_kernel_scaling(seed, jobs):
    out, ok = {}, True
    wide = shipped_scenario("scaling_wide", seed=seed)
    for m in (0.0, 1.0):
        t = limits.sweep_kernel_scaling(wide, [1, 2, 4, 8, 16], m, jobs=jobs)
        gap = t.gaps[-1]
        ok &= gap <= 5e-2
        out[f"large_gamma_m{m:g}"] = {"s_A": t.s_A, "target": t.reference_limit, "gap_at_16": gap}
    narrow = shipped_scenario("scaling_narrow", seed=seed)
    for m in (0.0, 1.0, 1.5):
        t = limits.sweep_kernel_scaling(narrow, [1, 0.5, 0.25], m, jobs=jobs)
        gap = t.gaps[0]
        ok &= gap <= 5e-2
        out[f"small_gamma_m{m:g}"] = {"s_A": t.s_A, "target": t.reference_limit, "gap_at_0.25": gap}
    radial = shipped_scenario("radial_mu", seed=seed)
    t = limits.sweep_kernel_scaling(radial, [1, 0.5, 0.25], 0.0, jobs=jobs)
    tol = radial.tolerances.root_tol
    pairwise = all(t.s_A[i] >= t.s_A[j] - tol for i in range(3) for j in range(i + 1, 3))
    ok &= pairwise and limits.radial_nondecreasing_mu(radial)
    out["radial_mu"] = {"gamma": t.values, "s_A": t.s_A, "pairwise_nonincreasing": pairwise}
    return ok, out


def c10_comparison(seed, jobs):
    cfg = shipped_scenario("x2_gap", seed=seed)
    rep = limits.check_monotonicity_properties(cfg, {"lipschitz_eps": 0.05})
    needed = ("beta_monotone", "mu_monotone", "mu_lipschitz", "nested_domain")
    counts = {p: len(rep.named(p)) for p in needed}
    failed = [c["property"] for c in rep.checks if not c["passed"]]
    # every Lipschitz trial must be present, with margin 1e-3 on the bound
    lip = rep.named("mu_lipschitz")
    lip_ok = len(lip) == 20 and all(abs(c["delta"]) <= c["sup_norm"] + 1e-3 for c in lip)
    ok = not failed and lip_ok and all(counts[p] >= 1 for p in needed)
    return ok, {
        "failed": failed,
        "counts": counts,
        "max_lipschitz_ratio": max((c["ratio"] for c in lip), default=math.nan),
        "nested_domain": rep.named("nested_domain"),
        "beta_delta": [c["delta"] for c in rep.named("beta_monotone")],
        "mu_delta": [c["delta"] for c in rep.named("mu_monotone")],
    }


def c11_growth_bound(seed, jobs):
    rows, ok = [], True
    for name in ("homogeneous", "decay", "x2_gap"):
        cfg = shipped_scenario(name, seed=seed)
        rep = spectral.solve_spectral_bound(cfg)
        est = simulate.estimate_growth_bound(cfg, 20.0)
        good = abs(est.omega - rep.s_A) <= 5e-2 and est.r2 >= 0.999
        ok &= good
        rows.append({"scenario": name, "s_A": rep.s_A, "omega": est.omega, "r2": est.r2, "passed": bool(good)})
    ok &= any(r["s_A"] > 0 for r in rows) and any(r["s_A"] < 0 for r in rows)
    return ok, {"scenarios": rows}


def c12_max_principle(seed, jobs):
    neg = shipped_scenario("decay", seed=seed)
    stack = compute_diffused_propagator(neg)
    rep = spectral.solve_spectral_bound(neg, stack)
    holds = criteria.verify_strong_max_principle(neg, rep, 50, stack=stack)
    pos = shipped_scenario("homogeneous", seed=seed)
    rep_pos = spectral.solve_spectral_bound(pos)
    viol = criteria.verify_strong_max_principle(pos, rep_pos)
    ok = rep.s_A < 0 and holds.holds and holds.positive_trials == 50 and rep_pos.s_A > 0 and viol.status == "violated"
    return ok, {
        "negative": {"s_A": rep.s_A, "positive_trials": holds.positive_trials, "trials": holds.trials, "min_value": min(holds.min_values)},
        "positive": {"s_A": rep_pos.s_A, "status": viol.status, "violation": viol.violation},
    }


def c13_determinism(seed, jobs):
    # rerun the randomised criteria and compare serialised bytes
    first = [dumps_report(fn(seed, jobs)[1]) for fn in (c03_log_convexity, c04_ordering)]
    second = [dumps_report(fn(seed, jobs)[1]) for fn in (c03_log_convexity, c04_ordering)]
    return first == second, {"compared": ["log_convexity", "ordering"], "identical": first == second}


CRITERIA = {
    1: ("homogeneous identity", c01_homogeneous_identity),
    2: ("truncated birth", c02_truncated_birth),
    3: ("log-convexity of r(M)", c03_log_convexity),
    4: ("ordering s_A >= s_B1C", c04_ordering),
    5: ("perturbation radius", c05_perturbation_radius),
    6: ("counterexample", c06_counterexample),
    7: ("criteria coherence", c07_criteria_coherence),
    8: ("diffusion-rate limits", c08_diffusion_limits),
    9: ("kernel-scaling limits", c09_kernel_scaling),
    10: ("monotonicity, Lipschitz, domain", c10_comparison),
    11: ("growth-bound cross-check", c11_growth_bound),
    12: ("maximum principle", c12_max_principle),
    13: ("determinism", c13_determinism),
}


def run_criterion(number: int, seed: int = 0, jobs: int = 1) -> CriterionResult:
    name, fn = CRITERIA[number]
    try:
        ok, details = fn(seed, jobs)
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        return CriterionResult(number, name, False, {}, f"{type(exc).__name__}: {exc}")
    return CriterionResult(number, name, bool(ok), details)


def run_acceptance(seed: int = 0, only=None, jobs: int = 1, progress=None) -> SuiteReport:
    report = SuiteReport("full", int(seed))
    for number in sorted(only or CRITERIA):
        res = run_criterion(number, seed, jobs)
        report.results.append(res)
        if progress:
            progress(res)
    return report


def run_quick(config: ScenarioConfig) -> SuiteReport:
    """Assumptions plus the invariants that one solve can certify on ``config``."""
    report = SuiteReport("quick", config.seed)
    add = report.results.append
    checks = validate_assumptions(config)
    for i, c in enumerate(checks.checks, 1):
        add(CriterionResult(i, f"assumption {c.name}", c.passed, {"detail": c.detail}, None if c.passed else c.detail))
    if not checks.ok:
        return report
    n = len(report.results)
    stack = compute_diffused_propagator(config)
    rep = spectral.solve_spectral_bound(config, stack)
    tol = config.tolerances.root_tol
    add(CriterionResult(n + 1, "ordering s_A >= s_B1C", rep.s_A >= rep.s_B1C - tol, {"s_A": rep.s_A, "s_B1C": rep.s_B1C}))
    add(CriterionResult(n + 2, "renewal residual", rep.renewal_residual <= 1e-8, {"residual": rep.renewal_residual}))
    add(CriterionResult(n + 3, "positive eigenvector", bool(np.all(rep.eigvec_age0 > 0)), {"min": float(rep.eigvec_age0.min())}))
    if config.rate_field.beta_cutoff_age is not None:
        gpe = criteria.verify_generalized_eigenvalue(config, rep, stack=stack)
        add(CriterionResult(n + 4, "generalized eigenvalue sandwich", gpe.passed, gpe.to_dict()))
    return report


def print_lines(report: SuiteReport, stream=None) -> None:
    stream = stream or sys.stdout
    for r in report.results:
        print(r.line(), file=stream)
