"""Parameter sweeps in the diffusion rate and kernel scale, and comparison properties."""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evolution import compute_diffused_propagator
from .model import RateField, ScenarioConfig, ScenarioError
from .spectral import (
    SpectralError,
    build_kernel_matrix,
    envelope_rate,
    solve_alpha_star,
    solve_spectral_bound,
)

LIMIT_TOL = 5e-2


@dataclass
class SweepTable:
    parameter: str
    values: list
    s_A: list
    s_B1C: list
    reference_limit: float
    verdicts: list = field(default_factory=list)
    existence: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def verdict(self, claim: str) -> dict:
        return next(v for v in self.verdicts if v["claim"] == claim)

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts)

    @property
    def gaps(self) -> list:
        return [abs(s - self.reference_limit) for s in self.s_A]

    def to_dict(self):
        return {
            "parameter": self.parameter,
            "values": self.values,
            "s_A": self.s_A,
            "s_B1C": self.s_B1C,
            "reference_limit": self.reference_limit,
            "verdicts": self.verdicts,
            "existence": self.existence,
            **self.extra,
        }

    def csv_rows(self):
        rows = []
        for v, s, b, ok, g in zip(self.values, self.s_A, self.s_B1C, self.existence, self.gaps):
            rows.append((v, s, b, "ok" if ok else "no-existence", g))
        return ("param", "s_A", "s_B1C", "verdict", "gap"), rows


def _solve_point(config: ScenarioConfig):
    report = solve_spectral_bound(config)
    tol = config.tolerances.root_tol
    return report.s_A, report.s_B1C, bool(report.s_A > report.s_B1C + 10 * tol)


def _map(fn, items, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _monotone_tail(gaps, n=3) -> bool:
    tail = gaps[-n:]
    return all(b <= a for a, b in zip(tail, tail[1:]))


def undiffused_bound(config: ScenarioConfig) -> float:
    """Diffusion-free growth bound with no diffusion-induced loss."""
    return solve_alpha_star(config.replace(diffusion_rate=0.0))


def sweep_diffusion_rate(config: ScenarioConfig, D_values, *, jobs=1, limit_tol=LIMIT_TOL) -> SweepTable:
    """Growth bound along a ladder of diffusion rates.

    Claims checked: the gap to the diffusion-free bound shrinks as ``D``
    decreases; the three largest rates respect the envelope upper bound; every
    rate respects the shifted lower bound.
    """
    values = sorted(float(d) for d in D_values)
    if not values or values[0] <= 0:
        raise ScenarioError("diffusion rates must be positive")
    tol = config.tolerances.root_tol
    theta = undiffused_bound(config)
    lam0 = build_kernel_matrix(config.kernel_spec, config.spatial_grid).principal_eigenvalue
    lam1 = envelope_rate(config)
    results = _map(_solve_point, [config.replace(diffusion_rate=d) for d in values], jobs)
    s_A = [r[0] for r in results]
    table = SweepTable("D", values, s_A, [r[1] for r in results], theta, existence=[r[2] for r in results])
    table.extra = {"lambda0_K": lam0, "lambda1_envelope": lam1}

    gaps = table.gaps
    # walk from the largest rate down towards zero
    down = gaps[::-1]
    mono = all(b <= a + tol for a, b in zip(down, down[1:]))
    table.verdicts.append(
        {"claim": "small_D_limit", "passed": bool(mono and gaps[0] <= limit_tol), "gap": gaps[0], "monotone": mono}
    )
    big = list(zip(values, s_A))[-3:]
    excess = [s - (-d * lam0 + lam1) for d, s in big]
    table.verdicts.append(
        {"claim": "large_D_upper_bound", "passed": bool(max(excess) <= tol), "max_excess": max(excess)}
    )
    lower = [s - (theta - d) for d, s in zip(values, s_A)]
    table.verdicts.append({"claim": "lower_bound", "passed": bool(min(lower) >= -tol), "min_margin": min(lower)})
    dec = all(b < a for a, b in zip(s_A, s_A[1:]))
    table.verdicts.append({"claim": "decreasing_in_D", "passed": dec, "informational": True})
    return table


def _scaled(config: ScenarioConfig, gamma: float, m: float) -> ScenarioConfig:
    return config.replace(kernel=dataclasses.replace(config.kernel_spec, gamma=float(gamma), m=float(m)))


def radial_nondecreasing_mu(config: ScenarioConfig) -> bool:
    """Mortality symmetric about the domain centre and non-decreasing away from it."""
    grid = config.spatial_grid
    centre = 0.5 * (grid.lower + grid.upper)
    mu = config.mu_grid
    if not np.allclose(mu, mu[:, ::-1], rtol=1e-12, atol=1e-14):
        return False
    right = mu[:, grid.nodes >= centre - 1e-12]
    return bool(np.all(np.diff(right, axis=1) >= -1e-14))


def sweep_kernel_scaling(
    config: ScenarioConfig, gamma_values, m: float, *, jobs=1, limit_tol=LIMIT_TOL, radial_mu=None
) -> SweepTable:
    """Growth bound with kernel ``J_gamma`` and diffusion rate ``D / gamma**m``.

    Large ``gamma`` targets the diffusion-free bound, shifted by ``-D`` when
    ``m = 0``; small ``gamma`` (``m < 2``) targets the unshifted bound.
    """
    values = sorted(float(g) for g in gamma_values)
    if not values or values[0] <= 0:
        raise ScenarioError("gamma values must be positive")
    m = float(m)
    tol = config.tolerances.root_tol
    theta = undiffused_bound(config)
    configs = [_scaled(config, g, m) for g in values]
    for g, c in zip(values, configs):
        if c.kernel_spec.support < c.spatial_grid.h:
            raise ScenarioError(f"gamma={g:g}: kernel support inside one grid cell; increase domain.n_x")
    results = _map(_solve_point, configs, jobs)
    s_A = [r[0] for r in results]
    big_target = theta - config.diffusion_rate if m == 0 else theta
    table = SweepTable("gamma", values, s_A, [r[1] for r in results], theta, existence=[r[2] for r in results])
    table.extra = {"m": m}
    if values[-1] > 1:
        table.reference_limit = big_target
        gaps = [abs(s - big_target) for s in s_A]
        ok = gaps[-1] <= limit_tol and _monotone_tail(gaps)
        table.verdicts.append({"claim": "large_gamma_limit", "passed": bool(ok), "gap": gaps[-1], "target": big_target})
    if values[0] < 1 and m < 2:
        gaps = [abs(s - theta) for s in s_A][::-1]
        ok = gaps[-1] <= limit_tol and _monotone_tail(gaps)
        table.verdicts.append({"claim": "small_gamma_limit", "passed": bool(ok), "gap": gaps[-1], "target": theta})
    radial = radial_nondecreasing_mu(config) if radial_mu is None else radial_mu
    if m == 0 and radial:
        worst = max((b - a for a, b in zip(s_A, s_A[1:])), default=-math.inf)
        table.verdicts.append({"claim": "nonincreasing_in_gamma", "passed": bool(worst <= tol), "max_increase": worst})
    if not table.verdicts:
        table.verdicts.append({"claim": "none_applicable", "passed": True})
    return table


# ---------------------------------------------------------------- comparison properties


@dataclass
class PropertyReport:
    base_s_A: float
    checks: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def named(self, name):
        return [c for c in self.checks if c["property"] == name]

    def to_dict(self):
        return {"base_s_A": self.base_s_A, "passed": self.passed, "checks": self.checks, "skipped": self.skipped}


DEFAULT_PERTURBATIONS = {
    "beta_bump": 0.2,
    "mu_bump": 0.1,
    "lipschitz_trials": 20,
    "lipschitz_eps": 0.05,
    "nested_domain": None,
    "gamma_jitter": 0.05,
}


class _ShiftedRate:
    def __init__(self, base, shift):
        self.base, self.shift = base, shift

    def __call__(self, a, x):
        return self.base(a, x) + self.shift(a, x)


class LatticeBump:
    """Bilinear interpolation of fixed values on a coarse (age, position) lattice."""

    def __init__(self, ages, positions, values):
        from scipy.interpolate import RegularGridInterpolator

        self.sup = float(np.abs(values).max())
        self._f = RegularGridInterpolator((ages, positions), values, bounds_error=False, fill_value=None)
        self.lo = (ages[0], positions[0])
        self.hi = (ages[-1], positions[-1])

    def __call__(self, a, x):
        a, x = np.broadcast_arrays(np.asarray(a, float), np.asarray(x, float))
        pts = np.stack([np.clip(a, self.lo[0], self.hi[0]).ravel(), np.clip(x, self.lo[1], self.hi[1]).ravel()], -1)
        return self._f(pts).reshape(a.shape)


def random_mu_perturbation(config: ScenarioConfig, eps: float, rng) -> LatticeBump:
    """Random bilinear field with sup norm exactly ``eps``."""
    ages = np.linspace(0, config.age_grid.a_max, 6)
    xs = np.linspace(config.spatial_grid.lower, config.spatial_grid.upper, 6)
    vals = rng.uniform(-1.0, 1.0, (6, 6))
    i = np.unravel_index(np.argmax(np.abs(vals)), vals.shape)
    vals /= abs(vals[i])
    return LatticeBump(ages, xs, eps * vals)


def _with_rates(config, beta=None, mu=None):
    rf = config.rate_field
    rates = RateField(
        beta or rf.beta, mu or rf.mu, beta_cutoff_age=rf.beta_cutoff_age, mu_lower_bound=None
    )
    return config.replace(rates=rates)


def check_monotonicity_properties(config: ScenarioConfig, perturbation_spec: dict | None = None) -> PropertyReport:
    """Compare growth bounds under rate bumps, random mortality noise, domain nesting and kernel-scale jitter."""
    spec = {**DEFAULT_PERTURBATIONS, **(perturbation_spec or {})}
    tol = config.tolerances.root_tol
    stack = compute_diffused_propagator(config)
    base = solve_spectral_bound(config, stack)
    s0 = base.s_A
    rep = PropertyReport(s0)
    grid = config.spatial_grid
    centre, half = 0.5 * (grid.lower + grid.upper), 0.5 * grid.length

    def solve(cfg):
        return solve_spectral_bound(cfg).s_A

    if spec["beta_bump"]:
        d = float(spec["beta_bump"])
        bump = lambda a, x: d * np.clip(1 - ((x - centre) / half) ** 2, 0, None) + 0 * a
        s = solve(_with_rates(config, beta=_ShiftedRate(config.rate_field.beta, bump)))
        rep.checks.append({"property": "beta_monotone", "passed": bool(s >= s0 - tol), "delta": s - s0})
    if spec["mu_bump"]:
        d = float(spec["mu_bump"])
        s = solve(_with_rates(config, mu=_ShiftedRate(config.rate_field.mu, lambda a, x: d + 0 * (a + x))))
        rep.checks.append({"property": "mu_monotone", "passed": bool(s <= s0 + tol), "delta": s - s0, "bump": d})
    rng = np.random.default_rng(config.seed)
    eps = float(spec["lipschitz_eps"])
    for trial in range(int(spec["lipschitz_trials"])):
        pert = random_mu_perturbation(config, eps, rng)
        cfg = _with_rates(config, mu=_ShiftedRate(config.rate_field.mu, pert))
        if cfg.mu_grid.min() <= 0:
            rep.skipped.append({"property": "mu_lipschitz", "trial": trial, "note": "perturbed mortality not positive"})
            continue
        sup = float(max(np.abs(cfg.mu_grid - config.mu_grid).max(), np.abs(cfg.mu_mid - config.mu_mid).max()))
        s = solve(cfg)
        rep.checks.append(
            {
                "property": "mu_lipschitz",
                "passed": bool(abs(s - s0) <= eps + 10 * tol),
                "delta": s - s0,
                "sup_norm": eps,
                "sampled_sup_norm": sup,
                "ratio": abs(s - s0) / eps,
            }
        )
    nested = spec["nested_domain"]
    if nested is None:
        nested = (centre - 0.8 * half, centre + 0.8 * half)
    if nested:
        sub = config.restrict(*nested)
        try:
            s_sub = solve(sub)
        except SpectralError as exc:
            rep.skipped.append({"property": "nested_domain", "note": str(exc)})
        else:
            ker = config.kernel_spec
            phi = base.eigfun / base.eigfun.max()
            mask = grid.mask(*nested)
            cutoff = config.rate_field.beta_cutoff_age or config.age_grid.a_max
            ages = config.age_grid.nodes <= cutoff + 1e-12
            min_phi = float(phi[np.ix_(ages, mask)].min())
            c0 = config.D * ker.sup_norm / min_phi
            removed = grid.length - sub.spatial_grid.length
            rep.checks.append(
                {
                    "property": "nested_domain",
                    "passed": bool(s_sub <= s0 + tol and s0 - s_sub <= c0 * removed + tol),
                    "s_sub": s_sub,
                    "difference": s0 - s_sub,
                    "C0": c0,
                    "bound": c0 * removed,
                }
            )
    jit = float(spec["gamma_jitter"] or 0)
    if jit:
        g = config.kernel_spec.gamma
        pts = []
        for f in (1 - jit, 1 + jit):
            try:
                pts.append((g * f, solve(_scaled(config, g * f, config.kernel_spec.m))))
            except ScenarioError as exc:
                rep.skipped.append({"property": "gamma_continuity", "note": str(exc)})
        if len(pts) == 2:
            modulus = max(abs(s - s0) / abs(gg - g) for gg, s in pts)
            rep.checks.append(
                {"property": "gamma_continuity", "passed": bool(math.isfinite(modulus)), "modulus": modulus, "diagnostic": True}
            )
    return rep
