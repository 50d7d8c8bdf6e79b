"""Problem definition: spatial and age grids, dispersal kernels, vital rates."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .expr import Expression


class ScenarioError(ValueError):
    """Malformed or inconsistent problem definition."""


class AssumptionError(ScenarioError):
    """A modelling hypothesis fails and strict checking was requested."""


# ---------------------------------------------------------------- grids


@dataclass(eq=False)
class SpatialGrid:
    lower: float
    upper: float
    n_x: int
    nodes: np.ndarray
    quad_weights: np.ndarray

    @classmethod
    def uniform(cls, lower: float, upper: float, n_x: int) -> "SpatialGrid":
        if not upper > lower:
            raise ScenarioError("domain.upper must exceed domain.lower")
        if n_x < 2:
            raise ScenarioError("domain.n_x must be at least 2")
        nodes = np.linspace(lower, upper, n_x)
        return cls(float(lower), float(upper), int(n_x), nodes, _trapezoid_weights(nodes))

    @property
    def h(self) -> float:
        return (self.upper - self.lower) / (self.n_x - 1)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def mask(self, lower: float, upper: float) -> np.ndarray:
        tol = 1e-9 * self.h
        return (self.nodes >= lower - tol) & (self.nodes <= upper + tol)

    def restrict(self, lower: float, upper: float) -> "SpatialGrid":
        """Sub-grid made of the nodes lying in ``[lower, upper]`` (same placement)."""
        keep = self.mask(lower, upper)
        if keep.sum() < 2:
            raise ScenarioError("restricted domain contains fewer than two nodes")
        nodes = self.nodes[keep].copy()
        return SpatialGrid(float(nodes[0]), float(nodes[-1]), len(nodes), nodes, _trapezoid_weights(nodes))


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    w = np.zeros_like(nodes)
    dx = np.diff(nodes)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights on ``n`` uniform nodes.

    An odd number of intervals closes with a 3/8 panel on the last three.
    """
    if n < 2:
        raise ScenarioError("age grid needs at least two nodes")
    w = np.zeros(n)
    intervals = n - 1
    if intervals == 1:
        w[:] = h / 2
        return w
    if intervals % 2:
        tail = 3
        body = intervals - 3
    else:
        tail = 0
        body = intervals
    if body:
        w[0 : body + 1 : 2] += 2 * h / 3
        w[1 : body : 2] += 4 * h / 3
        w[0] -= h / 3
        w[body] -= h / 3
    if tail:
        w[body : body + 4] += 3 * h / 8 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


@dataclass(eq=False)
class AgeGrid:
    a_max: float
    n_a: int
    nodes: np.ndarray
    weights: np.ndarray
    is_truncated: bool = False
    truncation_tail_bound: float = 0.0

    @classmethod
    def uniform(cls, a_max: float, n_a: int, *, is_truncated=False, tail_bound=0.0) -> "AgeGrid":
        if not (a_max > 0 and math.isfinite(a_max)):
            raise ScenarioError("age horizon must be positive and finite after truncation")
        nodes = np.linspace(0.0, a_max, n_a)
        h = a_max / (n_a - 1)
        return cls(float(a_max), int(n_a), nodes, simpson_weights(n_a, h), is_truncated, float(tail_bound))

    @property
    def h(self) -> float:
        return self.a_max / (self.n_a - 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.nodes[:-1] + self.h / 2


def truncation_age(mu_floor: float, root_tol: float) -> float:
    """Age beyond which survival is below ``root_tol/10`` at the given floor rate."""
    return math.log(10.0 / root_tol) / mu_floor


# ---------------------------------------------------------------- kernels

PROFILES = ("epanechnikov", "constant", "table")


@dataclass(eq=False)
class KernelSpec:
    """Dispersal profile ``J`` and its scaled version ``J_gamma(z) = J(z/gamma)/gamma``.

    The profile is normalised to unit mass; ``radius`` is the support of the
    unscaled profile and ``m`` the cost exponent dividing the diffusion rate.
    """

    profile: str = "epanechnikov"
    radius: float = 1.0
    gamma: float = 1.0
    m: float = 0.0
    table_z: np.ndarray | None = None
    table_values: np.ndarray | None = None
    normalization_constant: float = field(init=False, default=1.0)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ScenarioError(f"kernel.profile must be one of {PROFILES}, got {self.profile!r}")
        if not self.gamma > 0:
            raise ScenarioError("kernel.gamma must be positive")
        if not self.m >= 0:
            raise ScenarioError("kernel.m must be nonnegative")
        if self.profile == "table":
            if self.table_z is None or self.table_values is None:
                raise ScenarioError("table kernel needs z and value columns")
            z = np.asarray(self.table_z, float)
            v = np.asarray(self.table_values, float)
            if z.shape != v.shape or z.ndim != 1 or len(z) < 2:
                raise ScenarioError("kernel table columns must be equal-length vectors")
            bad = np.flatnonzero(~np.isfinite(z) | ~np.isfinite(v))
            if bad.size:
                raise ScenarioError(f"kernel table has a non-finite entry at row {bad[0]}")
            if np.any(np.diff(z) <= 0) or z[0] < 0:
                raise ScenarioError("kernel table abscissae must be increasing and start at z>=0")
            self.table_z, self.table_values = z, v
            self.radius = float(z[-1])
        if not self.radius > 0:
            raise ScenarioError("kernel.radius must be positive")
        self.normalization_constant = 1.0 / self._raw_mass()

    def _raw(self, z):
        s = np.abs(np.asarray(z, float))
        if self.profile == "epanechnikov":
            return np.where(s <= self.radius, 1.0 - (s / self.radius) ** 2, 0.0)
        if self.profile == "constant":
            return np.where(s <= self.radius * (1 + 1e-12), 1.0, 0.0)
        return np.where(s <= self.radius, np.interp(s, self.table_z, self.table_values), 0.0)

    def _raw_mass(self) -> float:
        if self.profile == "epanechnikov":
            return 4.0 * self.radius / 3.0
        if self.profile == "constant":
            return 2.0 * self.radius
        # piecewise-linear profile: trapezoid is exact, doubled for symmetry
        mass = 2.0 * np.trapezoid(self.table_values, self.table_z)
        if self.table_z[0] > 0:
            mass += 2.0 * self.table_z[0] * self.table_values[0]
        if not mass > 0:
            raise ScenarioError("kernel table has zero mass")
        return float(mass)

    def base(self, z):
        """Unscaled normalised profile ``J``."""
        return self.normalization_constant * self._raw(z)

    def __call__(self, z):
        return self.base(np.asarray(z, float) / self.gamma) / self.gamma

    @property
    def support(self) -> float:
        return self.radius * self.gamma

    @property
    def sup_norm(self) -> float:
        """``max J_gamma``."""
        if self.profile == "table":
            return float(self.normalization_constant * np.max(self.table_values) / self.gamma)
        return self.normalization_constant / self.gamma

    def scaled(self, gamma: float) -> "KernelSpec":
        return dataclasses.replace(self, gamma=float(gamma))

    def to_dict(self) -> dict:
        out = {"profile": self.profile, "radius": self.radius, "gamma": self.gamma, "m": self.m}
        if self.profile == "table":
            out["table"] = "z,J\n" + "\n".join(f"{z!r},{v!r}" for z, v in zip(self.table_z, self.table_values))
            del out["radius"]
        return out


@dataclass(eq=False)
class DiscreteKernelOperator:
    matrix: np.ndarray
    grid: SpatialGrid
    kernel: KernelSpec
    lattice_scale: float

    def __matmul__(self, v):
        return self.matrix @ v

    @property
    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @cached_property
    def principal_eigenvalue(self) -> float:
        """``1 - r(K)``: principal eigenvalue of ``I - K``."""
        from .spectral import spectral_radius

        return 1.0 - spectral_radius(self.matrix).radius


def build_kernel_matrix(kernel: KernelSpec, grid: SpatialGrid) -> DiscreteKernelOperator:
    """Quadrature matrix ``M[i, j] = J_gamma(x_i - x_j) * w_j``.

    Smooth profiles are rescaled so that the full lattice sum of the kernel
    equals one; the constant profile keeps its exact value.  Either way every
    row sum stays at most one.
    """
    h = grid.h
    support = kernel.support
    if support < h:
        raise ScenarioError(
            f"kernel support {support:.3g} is narrower than one grid cell ({h:.3g}); increase domain.n_x"
        )
    diff = grid.nodes[:, None] - grid.nodes[None, :]
    mat = kernel(diff) * grid.quad_weights[None, :]
    scale = 1.0
    if kernel.profile != "constant":
        k = np.arange(-math.floor(support / h) - 1, math.floor(support / h) + 2)
        scale = 1.0 / float(np.sum(kernel(k * h)) * h)
    mat *= scale
    top = mat.sum(axis=1).max()
    if top > 1.0:
        scale /= top
        mat /= top
    return DiscreteKernelOperator(mat, grid, kernel, scale)


# ---------------------------------------------------------------- rates


class TableRate:
    """Bilinear interpolation of a rate tabulated on an (age, position) lattice."""

    def __init__(self, ages, positions, values, name):
        self.name = name
        self.ages = np.asarray(ages, float)
        self.positions = np.asarray(positions, float)
        self.values = np.asarray(values, float)
        self._interp = RegularGridInterpolator(
            (self.ages, self.positions), self.values, method="linear", bounds_error=False, fill_value=None
        )

    def __call__(self, a, x):
        a = np.asarray(a, float)
        x = np.asarray(x, float)
        shape = np.broadcast_shapes(a.shape, x.shape)
        aa = np.clip(np.broadcast_to(a, shape), self.ages[0], self.ages[-1])
        xx = np.clip(np.broadcast_to(x, shape), self.positions[0], self.positions[-1])
        pts = np.stack([aa.ravel(), xx.ravel()], axis=-1)
        return self._interp(pts).reshape(shape)


def parse_rate_table(text: str):
    """Parse CSV text with header ``a,x,beta,mu`` into two :class:`TableRate` objects."""
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    header = [h.strip() for h in lines[0].split(",")]
    if header != ["a", "x", "beta", "mu"]:
        raise ScenarioError(f"rate table header must be 'a,x,beta,mu', got {lines[0]!r}")
    rows = []
    for i, ln in enumerate(lines[1:], start=1):
        parts = ln.split(",")
        if len(parts) != 4:
            raise ScenarioError(f"rate table row {i} has {len(parts)} columns, expected 4")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ScenarioError(f"rate table row {i} is not numeric") from None
    data = np.array(rows)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        raise ScenarioError(f"rate table has a non-finite value at row {bad[0][0] + 1}")
    ages = np.unique(data[:, 0])
    xs = np.unique(data[:, 1])
    if len(ages) < 2 or len(xs) < 2 or len(data) != len(ages) * len(xs):
        raise ScenarioError("rate table must fill a full a-by-x lattice with at least 2 values per axis")
    beta = np.full((len(ages), len(xs)), np.nan)
    mu = np.full_like(beta, np.nan)
    ia = np.searchsorted(ages, data[:, 0])
    ix = np.searchsorted(xs, data[:, 1])
    beta[ia, ix] = data[:, 2]
    mu[ia, ix] = data[:, 3]
    if np.isnan(beta).any():
        raise ScenarioError("rate table has duplicate lattice points")
    return TableRate(ages, xs, beta, "beta"), TableRate(ages, xs, mu, "mu")


def _as_rate(value, name):
    if callable(value):
        return value
    if isinstance(value, (int, float)):
        return Expression(repr(float(value)))
    if isinstance(value, str):
        return Expression(value)
    raise ScenarioError(f"rates.{name} must be an expression string or number")


@dataclass(eq=False)
class RateField:
    """Fertility ``beta(a, x)`` and mortality ``mu(a, x)``.

    ``beta_cutoff_age`` zeroes fertility from that age on.  ``mu_lower_bound``
    defaults to the smallest sampled mortality.
    """

    beta: object
    mu: object
    beta_cutoff_age: float | None = None
    mu_lower_bound: float | None = None
    table_text: str | None = None

    def __post_init__(self):
        self.beta = _as_rate(self.beta, "beta")
        self.mu = _as_rate(self.mu, "mu")
        if self.beta_cutoff_age is not None and not self.beta_cutoff_age > 0:
            raise ScenarioError("rates.beta_cutoff_age must be positive")

    def beta_values(self, a, x):
        a = np.asarray(a, float)
        vals = self.beta(a, x)
        if self.beta_cutoff_age is not None:
            vals = np.where(a > self.beta_cutoff_age, 0.0, vals)
        return vals

    def mu_values(self, a, x):
        return self.mu(a, x)

    def source(self) -> dict:
        if self.table_text is not None:
            out = {"table": self.table_text}
        else:
            out = {"beta": _source_text(self.beta), "mu": _source_text(self.mu)}
        if self.beta_cutoff_age is not None:
            out["beta_cutoff_age"] = self.beta_cutoff_age
        if self.mu_lower_bound is not None:
            out["mu_lower_bound"] = self.mu_lower_bound
        return out


def _source_text(rate):
    if isinstance(rate, Expression):
        return rate.text
    raise ScenarioError("only expression or table rates can be serialised")


def survival_probability(rate: RateField, tau: float, a: float, x: float) -> float:
    """``exp(-int_tau^a mu(s, x) ds)`` at position ``x``."""
    if tau < 0 or a < 0:
        raise ValueError("ages must be nonnegative")
    if tau > a:
        raise ValueError(f"survival needs tau <= a, got tau={tau} > a={a}")
    if tau == a:
        return 1.0
    hazard, _ = integrate.quad(lambda s: float(rate.mu_values(s, x)), tau, a, epsabs=1e-13, epsrel=1e-12, limit=200)
    return math.exp(-hazard)


# ---------------------------------------------------------------- scenario


@dataclass
class Tolerances:
    root_tol: float = 1e-8
    power_iter_tol: float = 1e-12
    max_iters: int = 10000

    def __post_init__(self):
        if not (0 < self.root_tol < 1):
            raise ScenarioError("solver.root_tol must lie in (0, 1)")
        if not (0 < self.power_iter_tol < 1):
            raise ScenarioError("solver.power_iter_tol must lie in (0, 1)")
        if int(self.max_iters) < 1:
            raise ScenarioError("solver.max_iters must be positive")
        self.max_iters = int(self.max_iters)


@dataclass(eq=False)
class ScenarioConfig:
    spatial_grid: SpatialGrid
    age_grid: AgeGrid
    kernel_spec: KernelSpec
    rate_field: RateField
    diffusion_rate: float
    tolerances: Tolerances = field(default_factory=Tolerances)
    seed: int = 0
    age_horizon: float = math.inf
    n_a: int = 200
    load_warnings: list = field(default_factory=list)

    @classmethod
    def build(
        cls,
        *,
        domain=(-1.0, 1.0),
        n_x=200,
        age_horizon=math.inf,
        n_a=200,
        kernel: KernelSpec | None = None,
        rates: RateField,
        diffusion_rate=1.0,
        tolerances: Tolerances | None = None,
        seed=0,
        allow_zero_diffusion=False,
    ) -> "ScenarioConfig":
        D = float(diffusion_rate)
        if not (D > 0 or (allow_zero_diffusion and D == 0)) or not math.isfinite(D):
            raise ScenarioError("diffusion_rate must be positive")
        tolerances = tolerances or Tolerances()
        grid = SpatialGrid.uniform(domain[0], domain[1], n_x)
        age_horizon = float(age_horizon)
        if not age_horizon > 0:
            raise ScenarioError("age.a_hat must be positive")
        if n_a < 3:
            raise ScenarioError("age.n_a must be at least 3")
        age_grid = _make_age_grid(rates, grid, age_horizon, n_a, tolerances.root_tol)
        return cls(
            grid,
            age_grid,
            kernel or KernelSpec(),
            rates,
            D,
            tolerances,
            int(seed),
            age_horizon,
            int(n_a),
        )

    def replace(self, **changes) -> "ScenarioConfig":
        """Rebuild with some ingredients swapped (grids are recomputed)."""
        args = dict(
            domain=(self.spatial_grid.lower, self.spatial_grid.upper),
            n_x=self.spatial_grid.n_x,
            age_horizon=self.age_horizon,
            n_a=self.n_a,
            kernel=self.kernel_spec,
            rates=self.rate_field,
            diffusion_rate=self.diffusion_rate,
            tolerances=self.tolerances,
            seed=self.seed,
            allow_zero_diffusion=True,
        )
        args.update(changes)
        return ScenarioConfig.build(**args)

    def restrict(self, lower: float, upper: float) -> "ScenarioConfig":
        """Same scenario on a sub-domain whose nodes are a subset of the current ones."""
        sub = self.spatial_grid.restrict(lower, upper)
        out = dataclasses.replace(self, spatial_grid=sub, load_warnings=[])
        out.age_grid = _make_age_grid(self.rate_field, sub, self.age_horizon, self.n_a, self.tolerances.root_tol)
        return out

    # -- sampled rates

    @property
    def D(self) -> float:
        """Effective diffusion coefficient ``diffusion_rate / gamma**m``."""
        k = self.kernel_spec
        return self.diffusion_rate / k.gamma**k.m

    @property
    def is_infinite_horizon(self) -> bool:
        return self.age_grid.is_truncated

    @cached_property
    def beta_grid(self) -> np.ndarray:
        a = self.age_grid.nodes[:, None]
        vals = self.rate_field.beta_values(a, self.spatial_grid.nodes[None, :])
        _check_finite(vals, "beta", self)
        return vals

    @cached_property
    def mu_grid(self) -> np.ndarray:
        vals = self.rate_field.mu_values(self.age_grid.nodes[:, None], self.spatial_grid.nodes[None, :])
        _check_finite(vals, "mu", self)
        return vals

    @cached_property
    def mu_mid(self) -> np.ndarray:
        """Mortality at age-cell midpoints, shape ``(n_a - 1, n_x)``."""
        vals = self.rate_field.mu_values(self.age_grid.midpoints[:, None], self.spatial_grid.nodes[None, :])
        _check_finite(vals, "mu", self)
        return vals

    @cached_property
    def log_survival(self) -> np.ndarray:
        """Cumulative hazard (negated) at age nodes by the midpoint rule."""
        out = np.zeros((self.age_grid.n_a, self.spatial_grid.n_x))
        out[1:] = -np.cumsum(self.age_grid.h * self.mu_mid, axis=0)
        return out

    @property
    def survival(self) -> np.ndarray:
        return np.exp(self.log_survival)

    @cached_property
    def mu_floor(self) -> float:
        """``mu_tilde``: configured floor or the smallest sampled mortality."""
        if self.rate_field.mu_lower_bound is not None:
            return float(self.rate_field.mu_lower_bound)
        return float(min(self.mu_grid.min(), self.mu_mid.min()))

    @property
    def mu_age_independent(self) -> bool:
        ref = self.mu_mid[0]
        return bool(np.all(np.abs(self.mu_mid - ref) <= 1e-14 * (1 + np.abs(ref))))

    @property
    def rates_x_independent(self) -> bool:
        b, m = self.beta_grid, self.mu_mid
        return bool(
            np.all(np.abs(b - b[:, :1]) <= 1e-12 * (1 + np.abs(b[:, :1])))
            and np.all(np.abs(m - m[:, :1]) <= 1e-12 * (1 + np.abs(m[:, :1])))
        )

    def envelopes(self) -> dict:
        b, m = self.beta_grid, self.mu_grid
        return {
            "beta_lower": b.min(axis=1),
            "beta_upper": b.max(axis=1),
            "mu_lower": m.min(axis=1),
            "mu_upper": m.max(axis=1),
            "mu_max": float(m.max()),
        }

    def survival_at(self, tau: float, a: float, x_index: int) -> float:
        return survival_probability(self.rate_field, tau, a, float(self.spatial_grid.nodes[x_index]))

    def to_dict(self) -> dict:
        """Plain data sufficient to rebuild this scenario."""
        return {
            "domain": {
                "lower": self.spatial_grid.lower,
                "upper": self.spatial_grid.upper,
                "n_x": self.spatial_grid.n_x,
            },
            "age": {"a_hat": "inf" if math.isinf(self.age_horizon) else self.age_horizon, "n_a": self.n_a},
            "kernel": self.kernel_spec.to_dict(),
            "rates": {**self.rate_field.source(), "diffusion_rate": self.diffusion_rate},
            "solver": {
                "root_tol": self.tolerances.root_tol,
                "power_iter_tol": self.tolerances.power_iter_tol,
                "max_iters": self.tolerances.max_iters,
                "seed": self.seed,
            },
        }


def _check_finite(vals, name, config):
    bad = np.argwhere(~np.isfinite(vals))
    if bad.size:
        k, i = bad[0]
        raise ScenarioError(f"rates.{name} is not finite at age index {k}, x index {i}")


def _make_age_grid(rates: RateField, grid: SpatialGrid, a_hat: float, n_a: int, root_tol: float) -> AgeGrid:
    cutoff = rates.beta_cutoff_age
    if cutoff is not None and cutoff < a_hat:
        return AgeGrid.uniform(cutoff, n_a)
    if math.isfinite(a_hat):
        return AgeGrid.uniform(a_hat, n_a)
    floor = rates.mu_lower_bound
    if floor is None:
        probe = np.linspace(0.0, 50.0, 201)
        vals = rates.mu_values(probe[:, None], grid.nodes[None, :])
        floor = float(np.nanmin(vals)) if np.isfinite(vals).all() else 0.0
    if floor > 0:
        a_max = truncation_age(floor, root_tol)
        return AgeGrid.uniform(a_max, n_a, is_truncated=True, tail_bound=math.exp(-floor * a_max))
    # no decay floor: fall back to a fixed horizon and let validation flag it
    return AgeGrid.uniform(100.0, n_a, is_truncated=True, tail_bound=1.0)
