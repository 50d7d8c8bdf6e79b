"""Check the standing hypotheses on kernel and rates for a scenario."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .model import AssumptionError, ScenarioConfig


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    detail: str = ""
    index: tuple | None = None


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    reproduction_number: dict | None = None

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def check(self, name: str) -> AssumptionCheck:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [asdict(c) for c in self.checks],
            "warnings": list(self.warnings),
            "reproduction_number": self.reproduction_number,
        }


def validate_assumptions(config: ScenarioConfig, *, strict: bool = False) -> ValidationReport:
    """Evaluate every hypothesis on the discretised scenario.

    Failures are collected in the report; with ``strict`` they raise
    :class:`AssumptionError` naming the failed checks.
    """
    rep = ValidationReport(warnings=list(config.load_warnings))
    add = rep.checks.append
    ker = config.kernel_spec
    grid = config.spatial_grid

    probe = np.linspace(-1.2 * ker.support, 1.2 * ker.support, 2001)
    vals = ker(probe)
    neg = np.flatnonzero(vals < 0)
    add(AssumptionCheck("kernel.nonnegative", not neg.size, index=(int(neg[0]),) if neg.size else None))
    add(AssumptionCheck("kernel.positive_at_zero", float(ker(0.0)) > 0))
    if ker.profile == "constant":
        mass = 1.0
    else:
        mass, _ = integrate.quad(lambda z: float(ker(z)), -ker.support, ker.support, epsabs=1e-14, epsrel=1e-13, limit=400)
    add(AssumptionCheck("kernel.unit_mass", abs(mass - 1.0) <= 1e-10, f"integral={mass:.15g}"))
    if ker.profile == "constant":
        # the jump at the support edge is invisible when the support covers all pairwise distances
        cont = ker.support >= grid.length * (1 - 1e-12)
        add(AssumptionCheck("kernel.continuous", cont, "constant profile must cover the diameter of the domain"))
    else:
        add(AssumptionCheck("kernel.continuous", True))

    beta, mu = config.beta_grid, config.mu_grid
    bad = np.argwhere(beta < 0)
    add(AssumptionCheck("beta.nonnegative", not bad.size, index=tuple(map(int, bad[0])) if bad.size else None))
    bad = np.argwhere(mu < 0)
    add(AssumptionCheck("mu.nonnegative", not bad.size, index=tuple(map(int, bad[0])) if bad.size else None))

    floor = config.mu_floor
    low = np.argwhere(mu < floor)
    # zeros of mu can sit between spatial nodes, so also probe a refined lattice
    fine_x = np.linspace(grid.lower, grid.upper, 8 * (grid.n_x - 1) + 1)
    fine_a = np.linspace(0.0, config.age_grid.a_max, 4 * (config.age_grid.n_a - 1) + 1)
    fine = np.broadcast_to(config.rate_field.mu_values(fine_a[:, None], fine_x[None, :]), (fine_a.size, fine_x.size))
    floor = min(floor, float(fine.min())) if config.rate_field.mu_lower_bound is None else floor
    ok = floor > 1e-8 and not low.size and float(fine.min()) >= floor
    if floor <= 1e-8:
        k, i = np.unravel_index(np.argmin(fine), fine.shape)
        idx = None
        detail = f"mortality lower bound is not positive: mu={fine[k, i]:.3g} at a={fine_a[k]:.6g}, x={fine_x[i]:.6g}"
    else:
        idx = tuple(map(int, low[0])) if low.size else None
        detail = f"mu_tilde={floor:g}"
    add(AssumptionCheck("mu.lower_bound", ok, detail, idx))

    add(AssumptionCheck("diffusion_rate.positive", config.diffusion_rate > 0, f"D={config.diffusion_rate:g}"))

    if config.rate_field.beta_cutoff_age is not None:
        add(AssumptionCheck("beta.cutoff", True, f"a2={config.rate_field.beta_cutoff_age:g}"))

    ag = config.age_grid
    if ag.is_truncated:
        tol = config.tolerances.root_tol
        add(
            AssumptionCheck(
                "age.truncation",
                ag.truncation_tail_bound < tol,
                f"a_max={ag.a_max:.6g}, tail bound={ag.truncation_tail_bound:.3g}",
            )
        )
        if config.rate_field.beta_cutoff_age is None:
            rep.reproduction_number = _scan_reproduction_number(config)
            add(
                AssumptionCheck(
                    "reproduction.exceeds_one",
                    rep.reproduction_number["achievable"],
                    f"best R_hat={rep.reproduction_number['best_value']:.6g}",
                )
            )
    elif config.rate_field.beta_cutoff_age is None:
        tail = mu[-1].max()
        if tail > 50 * max(mu[0].max(), 1e-300):
            rep.warnings.append("mortality grows steeply near the maximal age; the finite horizon is heuristic")

    if strict and not rep.ok:
        names = ", ".join(c.name for c in rep.failures)
        raise AssumptionError(f"assumption check failed: {names}")
    return rep


def reproduction_number(config: ScenarioConfig, lam: float) -> float:
    """``int beta_lower(a) exp(-(lam + D) a) survival_upper(a) da`` on the age grid."""
    env = config.envelopes()
    hazard_upper = np.zeros(config.age_grid.n_a)
    hazard_upper[1:] = np.cumsum(config.age_grid.h * config.mu_mid.max(axis=1))
    a = config.age_grid.nodes
    expo = -(lam + config.D) * a - hazard_upper
    return float(config.age_grid.weights @ (env["beta_lower"] * np.exp(np.minimum(expo, 700.0))))


def _scan_reproduction_number(config: ScenarioConfig) -> dict:
    floor = max(config.mu_floor, 0.0)
    base = -config.D - floor
    a_max = config.age_grid.a_max
    bmax = float(config.beta_grid.max())
    best = (-math.inf, None)
    tried = 0
    for delta in np.logspace(-3, 1.5, 46):
        # skip shifts whose neglected tail would dominate the truncated integral
        if bmax * math.exp(-delta * a_max) / delta > 1e-3:
            continue
        tried += 1
        lam = base + delta
        val = reproduction_number(config, lam)
        if val > best[0]:
            best = (val, lam)
    return {
        "best_value": float(best[0]) if tried else 0.0,
        "best_lambda": best[1],
        "achievable": bool(tried and best[0] > 1.0),
        "samples": tried,
    }
