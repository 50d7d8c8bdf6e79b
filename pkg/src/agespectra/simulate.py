"""Time stepping of the linear age-space model and growth-rate estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ScenarioConfig, build_kernel_matrix


class SimulationError(RuntimeError):
    pass


@dataclass
class SimulationState:
    """Density ``u(a, x)`` stored as ``exp(log_scale) * u``."""

    t: float
    u: np.ndarray
    log_scale: float = 0.0
    log_mass_history: list = field(default_factory=list)

    def mass(self, config: ScenarioConfig) -> float:
        """Discrete L1 norm of the unscaled field ``u``."""
        return float(config.age_grid.weights @ self.u @ config.spatial_grid.quad_weights)

    def total_mass(self, config: ScenarioConfig) -> float:
        return math.exp(self.log_scale) * self.mass(config)

    def log_total_mass(self, config: ScenarioConfig) -> float:
        return self.log_scale + math.log(self.mass(config))


class _Stepper:
    def __init__(self, config: ScenarioConfig, dt: float, kernel=None):
        ag = config.age_grid
        if not 0 < dt <= ag.h * (1 + 1e-12):
            raise SimulationError(f"time step {dt:g} violates the age-transport limit dt <= {ag.h:g}")
        self.config = config
        self.dt = dt
        self.exact_shift = abs(dt - ag.h) <= 1e-12 * ag.h
        self.K = (kernel or build_kernel_matrix(config.kernel_spec, config.spatial_grid)).matrix
        D = config.D
        mu = config.mu_mid if self.exact_shift else config.mu_grid
        self.survive = np.exp(-(mu + D) * dt)
        self.beta_w = ag.weights[:, None] * config.beta_grid
        self.D = D

    def __call__(self, u):
        dt, D = self.dt, self.D
        new = np.empty_like(u)
        if self.exact_shift:
            # cohorts move one age cell; the oldest leaves the grid
            new[1:] = self.survive * u[:-1] + dt * D * (u[:-1] @ self.K.T)
        else:
            c = dt / self.config.age_grid.h
            moved = u.copy()
            moved[1:] -= c * (u[1:] - u[:-1])
            moved[0] -= c * u[0]
            new[1:] = self.survive[1:] * moved[1:] + dt * D * (moved[1:] @ self.K.T)
        # renewal at age zero, implicit in the age-zero quadrature node
        births = (self.beta_w[1:] * new[1:]).sum(axis=0)
        new[0] = births / (1.0 - self.beta_w[0])
        return new


def step_linear_model(state: SimulationState, config: ScenarioConfig, dt: float | None = None, *, _stepper=None) -> SimulationState:
    """Advance one time step and renormalise, accumulating the log of the mass."""
    stepper = _stepper or _Stepper(config, config.age_grid.h if dt is None else dt)
    new = stepper(state.u)
    if new.min() < -1e-12 * max(1.0, np.abs(new).max()):
        raise SimulationError(f"negative density {new.min():.3g} at t={state.t + stepper.dt:g}; step rejected")
    new = np.maximum(new, 0.0)
    out = SimulationState(state.t + stepper.dt, new, state.log_scale, state.log_mass_history)
    mass = out.mass(config)
    if not (mass > 0 and math.isfinite(mass)):
        raise SimulationError("population vanished or overflowed")
    out.u = new / mass
    out.log_scale = state.log_scale + math.log(mass)
    out.log_mass_history.append((out.t, out.log_scale))
    return out


def simulate(config: ScenarioConfig, t_final: float, dt: float | None = None, u0=None) -> SimulationState:
    """Run from ``u0`` (default: ones) up to ``t_final``."""
    ag = config.age_grid
    dt = ag.h if dt is None else float(dt)
    u = np.ones((ag.n_a, config.spatial_grid.n_x)) if u0 is None else np.array(u0, dtype=float)
    if u.shape != (ag.n_a, config.spatial_grid.n_x):
        raise SimulationError("initial field has the wrong shape")
    if u.min() < 0:
        raise SimulationError("initial field must be nonnegative")
    state = SimulationState(0.0, u)
    mass = state.mass(config)
    if not mass > 0:
        raise SimulationError("trivial trajectory: initial data is zero")
    state.u = u / mass
    state.log_scale = math.log(mass)
    state.log_mass_history.append((0.0, state.log_scale))
    stepper = _Stepper(config, dt)
    n_steps = int(math.ceil(t_final / dt - 1e-9))
    for _ in range(n_steps):
        state = step_linear_model(state, config, _stepper=stepper)
    return state


@dataclass
class GrowthEstimate:
    omega: float
    r2: float
    history: list
    burn_in: float

    @property
    def confident(self) -> bool:
        return self.r2 >= 0.999

    def to_dict(self):
        return {"omega": self.omega, "r2": self.r2, "burn_in": self.burn_in, "confident": self.confident}

    def csv_rows(self):
        return ("t", "log_mass"), self.history


def estimate_growth_bound(
    config: ScenarioConfig, t_final: float, dt: float | None = None, *, u0=None, burn_in: float = 0.3
) -> GrowthEstimate:
    """Least-squares slope of the log mass after discarding the first ``burn_in`` fraction."""
    state = simulate(config, t_final, dt, u0)
    hist = np.array(state.log_mass_history)
    keep = hist[:, 0] >= burn_in * t_final
    t, y = hist[keep, 0], hist[keep, 1]
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return GrowthEstimate(float(slope), r2, [(float(a), float(b)) for a, b in state.log_mass_history], burn_in)
