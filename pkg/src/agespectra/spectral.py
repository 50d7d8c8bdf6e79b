"""Characteristic functions, principal roots and spectral radii.

The diffusion-free growth bound comes from the per-node characteristic
integral ``G``; the growth bound with diffusion is the ``lambda`` at which the
next-generation matrix ``M(lambda)`` has spectral radius one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .evolution import PropagatorStack, compute_diffused_propagator
from .model import ScenarioConfig, build_kernel_matrix

_EXP_CAP = 700.0


class SpectralError(RuntimeError):
    """Numerical failure in a spectral computation."""


class DomainError(SpectralError):
    pass


class BracketError(SpectralError):
    pass


class NonConvergenceError(SpectralError):
    def __init__(self, message, estimate=None, vector=None, diagnostic=None):
        super().__init__(message)
        self.estimate = estimate
        self.vector = vector
        self.diagnostic = diagnostic or {}


# ---------------------------------------------------------------- power iteration


@dataclass
class PerronResult:
    radius: float
    vector: np.ndarray
    iterations: int
    converged: bool = True


def _oscillation(history):
    d = np.diff(np.asarray(history[-50:]))
    return {
        "last_estimates": [float(v) for v in history[-5:]],
        "sign_changes": int(np.sum(np.sign(d[1:]) * np.sign(d[:-1]) < 0)) if len(d) > 1 else 0,
    }


def spectral_radius(matrix, tol: float = 1e-12, max_iters: int = 10000) -> PerronResult:
    """Perron root and nonnegative unit eigenvector of a nonnegative matrix.

    Inverse iteration with a shift kept above the Collatz-Wielandt upper
    bound, so every iterate stays positive and converges to the Perron pair.
    Starts from the all-ones vector.
    """
    A = np.array(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise ValueError("spectral_radius needs a nonempty square matrix")
    if A.min() < -1e-12:
        i, j = np.unravel_index(np.argmin(A), A.shape)
        raise ValueError(f"matrix has a negative entry {A[i, j]:.3g} at ({i}, {j})")
    A[A < 0] = 0.0
    n = A.shape[0]
    if not np.isfinite(A).all():
        raise ValueError("matrix has non-finite entries")
    x = np.full(n, 1.0 / n)
    if not A.any():
        return PerronResult(0.0, np.full(n, 1 / math.sqrt(n)), 0)
    top = A.sum(axis=1).max()
    sigma = top * 1.01 + 1e-300
    lu = lu_factor(sigma * np.eye(n) - A, check_finite=False)
    history = []
    prev = None
    for it in range(1, max_iters + 1):
        z = np.maximum(lu_solve(lu, x, check_finite=False), 0.0)
        total = z.sum()
        if not (total > 0 and np.isfinite(total)):
            raise NonConvergenceError("inverse iteration lost positivity", prev, x, _oscillation(history))
        x = z / total
        Ax = A @ x
        est = float(x @ Ax / (x @ x))
        history.append(est)
        scale = max(1.0, abs(est))
        if prev is not None and abs(est - prev) <= tol * scale:
            resid = np.abs(Ax - est * x).max() / x.max()
            if resid <= max(10 * tol, 1e-13) * scale:
                return PerronResult(est, x / np.linalg.norm(x), it)
        prev = est
        if x.min() > 0:
            ratios = Ax / x
            up, low = ratios.max(), ratios.min()
            new_sigma = up + max(up - low, 1e-9 * max(up, 1e-300))
            if new_sigma < sigma * (1 - 1e-12):
                sigma = new_sigma
                lu = lu_factor(sigma * np.eye(n) - A, check_finite=False)
    raise NonConvergenceError(
        f"spectral radius did not converge in {max_iters} iterations", prev, x, _oscillation(history)
    )


def power_iteration(apply, x0, norm, tol: float = 1e-12, max_iters: int = 10000):
    """Plain power iteration for a positive linear map given as a callable.

    Returns ``(radius, vector, iterations)``; the radius estimate is the norm
    ratio ``|T x| / |x|``.  Both the ratio and the normalised iterate must
    settle, since the ratio alone can be exact long before the vector is.
    """
    x = x0 / norm(x0)
    prev = None
    history = []
    vec_tol = max(1e3 * tol, 1e-10)
    for it in range(1, max_iters + 1):
        y = apply(x)
        ny = norm(y)
        if ny == 0:
            return 0.0, x, it
        est = float(ny)
        history.append(est)
        y = y / ny
        moved = norm(y - x)
        x = y
        if prev is not None and abs(est - prev) <= tol * max(1.0, est) and moved <= vec_tol:
            return est, x, it
        prev = est
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iters} iterations", prev, x, _oscillation(history)
    )


# ---------------------------------------------------------------- scalar roots


def _bisect_decreasing(f, lo, hi, xtol_rel=4e-16, max_iter=300):
    """Root of a decreasing function with ``f(lo) > 0 >= f(hi)``."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol_rel * max(1.0, abs(mid)) or mid in (lo, hi):
            break
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _bracket_decreasing(f, lower_bound=-math.inf, start=0.0, max_doublings=80):
    """Bracket ``[lo, hi]`` with ``f(lo) > 0 >= f(hi)``, growing geometrically from ``start``.

    ``lower_bound`` is an open bound of the admissible interval.
    """
    if not start > lower_bound:
        start = lower_bound + 1.0
    if f(start) > 0:
        lo, step = start, 1.0
        for _ in range(max_doublings):
            hi = start + step
            if f(hi) <= 0:
                return lo, hi
            lo, step = hi, 2 * step
        raise BracketError("characteristic equation unsolvable: no upper bracket")
    hi = start
    if math.isinf(lower_bound):
        step = 1.0
        for _ in range(max_doublings):
            lo = start - step
            if f(lo) > 0:
                return lo, hi
            hi, step = lo, 2 * step
    else:
        lo = hi
        for _ in range(max_doublings):
            lo = lower_bound + 0.5 * (lo - lower_bound)
            if f(lo) > 0:
                return lo, hi
            hi = lo
    raise BracketError("characteristic equation unsolvable: no lower bracket in the admissible interval")


def _exp_weights(rate, ages, log_surv):
    expo = -np.multiply.outer(ages, rate) if np.ndim(rate) else -rate * ages
    if np.ndim(log_surv) == 2 and np.ndim(expo) == 1:
        expo = expo[:, None]
    return np.exp(np.minimum(expo + log_surv, _EXP_CAP))


def lotka_sum(rate, weights, ages, fertility, log_surv):
    """``sum_k w_k f_k exp(-rate a_k) pi_k``; ``rate`` may be per column."""
    return weights @ (fertility * _exp_weights(rate, ages, log_surv))


def lotka_roots(weights, ages, fertility, log_surv, lower_bound=-math.inf):
    """Per-column roots of ``lotka_sum(s) = 1``.

    Columns without a root above ``lower_bound`` get ``has_root = False``.
    """
    fert = np.atleast_2d(np.asarray(fertility, float).T).T
    ls = np.atleast_2d(np.asarray(log_surv, float).T).T
    n = fert.shape[1]
    ls = np.broadcast_to(ls, fert.shape)

    def L(s):
        return np.einsum("k,kn->n", weights, fert * np.exp(np.minimum(-np.outer(ages, s) + ls, _EXP_CAP)))

    start = 0.0 if lower_bound < 0 else lower_bound + 1.0
    hi = np.full(n, start)
    lo = np.full(n, np.nan)
    for _ in range(80):
        above = L(hi) > 1
        if not above.any():
            break
        lo[above] = hi[above]
        hi[above] = hi[above] + np.maximum(1.0, np.abs(hi[above] - start))
    need = np.isnan(lo)
    has_root = np.ones(n, dtype=bool)
    if need.any():
        for j in range(80):
            if math.isinf(lower_bound):
                cand = start - 2.0**j
            else:
                cand = lower_bound + (start - lower_bound) / 2.0 ** (j + 1)
            vals = L(np.full(n, cand))
            found = need & (vals > 1)
            lo[found] = cand
            hi[need & ~found] = cand
            need = need & ~found
            if not need.any():
                break
        has_root[need] = False
        lo[need] = hi[need]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        width = hi - lo
        if np.all(width[has_root] <= 4e-16 * np.maximum(1.0, np.abs(mid[has_root]))):
            break
        up = L(mid) > 1
        lo = np.where(up & has_root, mid, lo)
        hi = np.where(~up & has_root, mid, hi)
    roots = 0.5 * (lo + hi)
    return roots, has_root


# ---------------------------------------------------------------- characteristic G


@dataclass
class CharacteristicProfile:
    alpha: float
    values: np.ndarray
    max_value: float
    argmax_index: int


def _check_alpha_domain(config: ScenarioConfig, alpha: float):
    if config.is_infinite_horizon:
        bound = -config.D - config.mu_floor
        if not alpha > bound:
            raise DomainError(f"alpha={alpha:.6g} outside the admissible interval (> {bound:.6g})")


def _characteristic_values(config: ScenarioConfig, alpha: float) -> np.ndarray:
    ag = config.age_grid
    return lotka_sum(alpha + config.D, ag.weights, ag.nodes, config.beta_grid, config.log_survival)


def evaluate_characteristic(config: ScenarioConfig, alpha: float) -> CharacteristicProfile:
    """``G_alpha(x) = int beta(a,x) exp(-(alpha + D) a) pi(0,a,x) da`` at every node."""
    _check_alpha_domain(config, alpha)
    vals = _characteristic_values(config, alpha)
    i = int(np.argmax(vals))
    return CharacteristicProfile(float(alpha), vals, float(vals[i]), i)


def _alpha_lower_bound(config):
    return -config.D - config.mu_floor if config.is_infinite_horizon else -math.inf


def solve_alpha_star(config: ScenarioConfig) -> float:
    """Diffusion-free growth bound: root of ``max_x G_alpha(x) = 1``."""
    f = lambda alpha: float(_characteristic_values(config, alpha).max()) - 1.0
    lo, hi = _bracket_decreasing(f, _alpha_lower_bound(config))
    root = _bisect_decreasing(f, lo, hi)
    if abs(f(root)) > config.tolerances.root_tol:
        raise SpectralError(f"characteristic root residual {f(root):.3g} exceeds tolerance")
    return root


@dataclass
class AlphaProfile:
    values: np.ndarray
    has_root: np.ndarray
    boundary: float

    def __getitem__(self, i):
        return self.values[i]


def alpha_of_x_profile(config: ScenarioConfig) -> AlphaProfile:
    """Per-node diffusion-free growth rates.

    Nodes with no root in the admissible interval carry its lower boundary
    (``-inf`` for a finite horizon) and ``has_root = False``.
    """
    ag = config.age_grid
    lower = -config.mu_floor if config.is_infinite_horizon else -math.inf
    roots, ok = lotka_roots(ag.weights, ag.nodes, config.beta_grid, config.log_survival, lower)
    boundary = _alpha_lower_bound(config)
    vals = np.where(ok, roots - config.D, boundary)
    return AlphaProfile(vals, ok, boundary)


def solve_alpha_of_x(config: ScenarioConfig, x_index: int) -> float:
    """Diffusion-free growth rate at one node (boundary value when no root exists)."""
    if not 0 <= x_index < config.spatial_grid.n_x:
        raise IndexError(f"node index {x_index} out of range")
    ag = config.age_grid
    lower = -config.mu_floor if config.is_infinite_horizon else -math.inf
    roots, ok = lotka_roots(
        ag.weights, ag.nodes, config.beta_grid[:, [x_index]], config.log_survival[:, [x_index]], lower
    )
    return float(roots[0] - config.D) if ok[0] else _alpha_lower_bound(config)


# ---------------------------------------------------------------- next-generation matrix


def _lambda_lower_bound(config, stack):
    if not config.is_infinite_horizon:
        return -math.inf
    lam0 = stack.kernel.principal_eigenvalue if stack.kernel is not None else 1.0
    return -stack.diffusion_rate * lam0 - config.mu_floor


def assemble_M_lambda(config: ScenarioConfig, stack: PropagatorStack, lam: float) -> np.ndarray:
    """``sum_k w_k diag(beta(a_k)) exp(-lam a_k) U(0, a_k)``."""
    ag = config.age_grid
    if stack.n_a != ag.n_a or stack.n_x != config.spatial_grid.n_x:
        raise ValueError("propagator stack does not match the scenario grids")
    bound = _lambda_lower_bound(config, stack)
    if not lam > bound:
        raise DomainError(f"lambda={lam:.6g} outside the admissible interval (> {bound:.6g})")
    coef = (ag.weights * np.exp(np.minimum(-lam * ag.nodes, _EXP_CAP)))[:, None] * config.beta_grid
    return np.einsum("kx,kxy->xy", coef, stack.matrices)


@dataclass
class SpectralReport:
    s_B1C: float
    s_A: float
    alpha_of_x: np.ndarray
    alpha_has_root: np.ndarray
    eigvec_age0: np.ndarray
    eigfun: np.ndarray
    residual_M: float
    renewal_residual: float
    spectral_gap: float
    r_M_at_s_A: float
    lambda0_K: float
    ages: np.ndarray
    nodes: np.ndarray
    r_F_samples: list = field(default_factory=list)

    @property
    def has_existence_gap(self) -> bool:
        return self.s_A > self.s_B1C

    def to_dict(self) -> dict:
        return {
            "s_B1C": self.s_B1C,
            "s_A": self.s_A,
            "alpha_of_x": self.alpha_of_x,
            "alpha_has_root": self.alpha_has_root,
            "eigvec_age0": self.eigvec_age0,
            "eigvec_min": float(self.eigvec_age0.min()),
            "residual_M": self.residual_M,
            "renewal_residual": self.renewal_residual,
            "spectral_gap": self.spectral_gap,
            "r_M_at_s_A": self.r_M_at_s_A,
            "lambda0_K": self.lambda0_K,
            "n_x": len(self.nodes),
            "n_a": len(self.ages),
            "r_F_samples": [[float(l), float(r)] for l, r in self.r_F_samples],
        }

    def csv_rows(self):
        aa, xx = np.meshgrid(self.ages, self.nodes, indexing="ij")
        return ("a", "x", "phi"), zip(aa.ravel(), xx.ravel(), self.eigfun.ravel())


def spectral_bound_of_stack(config: ScenarioConfig, stack: PropagatorStack, alpha_star: float):
    """``lambda`` with ``r(M(lambda)) = 1``, bracketed from below by ``alpha_star``."""
    tol = config.tolerances
    f = lambda lam: spectral_radius(assemble_M_lambda(config, stack, lam), tol.power_iter_tol, tol.max_iters).radius - 1.0
    lo = alpha_star
    f_lo = f(lo)
    if f_lo <= 0:
        # radius at the diffusion-free root is one up to rounding (diffusion-free limit)
        if f_lo < -max(tol.root_tol, 1e-9):
            raise SpectralError(f"r(M) at the diffusion-free root is {f_lo + 1:.12g} < 1")
        return lo
    step = 1.0
    for _ in range(80):
        hi = lo + step
        if f(hi) <= 0:
            break
        lo, step = hi, 2 * step
    else:
        raise BracketError("spectral bound above the search window")
    return _bisect_decreasing(f, lo, hi)


def solve_spectral_bound(
    config: ScenarioConfig,
    stack: PropagatorStack | None = None,
    *,
    f_samples=(),
) -> SpectralReport:
    """Both growth bounds, the principal eigenpair and diagnostics.

    ``f_samples`` lists ``lambda`` values at which ``r(F_lambda)`` is recorded.
    """
    stack = stack or compute_diffused_propagator(config)
    tol = config.tolerances
    alpha_star = solve_alpha_star(config)
    s_A = spectral_bound_of_stack(config, stack, alpha_star)
    M = assemble_M_lambda(config, stack, s_A)
    perron = spectral_radius(M, tol.power_iter_tol, tol.max_iters)
    if abs(perron.radius - 1.0) > tol.root_tol:
        raise SpectralError(f"r(M) at the computed bound is {perron.radius:.12g}")
    phi0 = perron.vector / perron.vector.max()
    residual_M = float(np.abs(M @ phi0 - phi0).max() / np.abs(phi0).max())
    ag = config.age_grid
    eigfun = np.exp(np.minimum(-s_A * ag.nodes, _EXP_CAP))[:, None] * np.einsum("kxy,y->kx", stack.matrices, phi0)
    renewal = phi0 - ag.weights @ (config.beta_grid * eigfun)
    mags = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
    gap = float(mags[1] / mags[0]) if len(mags) > 1 and mags[0] > 0 else 0.0
    profile = alpha_of_x_profile(config)
    lam0 = stack.kernel.principal_eigenvalue if stack.kernel is not None else float("nan")
    samples = [(float(l), spectral_radius_F(config, l, alpha_star=alpha_star)) for l in f_samples]
    return SpectralReport(
        s_B1C=alpha_star,
        s_A=float(s_A),
        alpha_of_x=profile.values,
        alpha_has_root=profile.has_root,
        eigvec_age0=phi0,
        eigfun=eigfun,
        residual_M=residual_M,
        renewal_residual=float(np.abs(renewal).max()),
        spectral_gap=gap,
        r_M_at_s_A=float(perron.radius),
        lambda0_K=float(lam0),
        ages=ag.nodes.copy(),
        nodes=config.spatial_grid.nodes.copy(),
        r_F_samples=samples,
    )


# ---------------------------------------------------------------- perturbation operator F


def _phi1(z):
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    return np.where(small, 1 - z / 2 + z * z / 6 - z**3 / 24, -np.expm1(-safe) / safe)


def _phi2(z):
    z = np.asarray(z, float)
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    exact = (-np.expm1(-safe) - safe * np.exp(-safe)) / (safe * safe)
    return np.where(small, 0.5 - z / 3 + z * z / 8 - z**3 / 30, exact)


class PoleError(SpectralError):
    pass


class FLambdaOperator:
    """Action of the perturbation operator ``F_lambda`` on pairs ``(eta, psi)``.

    ``eta`` is a spatial vector and ``psi`` an age-by-space field; the image
    has zero boundary part.  Age integrals of ``psi`` use exponential
    product integration with ``psi`` linear on each age cell.
    """

    def __init__(self, config: ScenarioConfig, lam: float, *, alpha_star=None, kernel=None):
        alpha_star = solve_alpha_star(config) if alpha_star is None else alpha_star
        if not lam > alpha_star + config.tolerances.root_tol:
            raise PoleError(f"lambda={lam:.6g} must exceed the diffusion-free bound {alpha_star:.6g}")
        self.config = config
        self.lam = float(lam)
        ag = config.age_grid
        h = ag.h
        kernel = kernel or build_kernel_matrix(config.kernel_spec, config.spatial_grid)
        self.K = kernel.matrix
        z = (lam + config.D + config.mu_mid) * h
        self.decay = np.exp(-z)
        self.w_old = h * _phi2(z)
        self.w_new = h * (_phi1(z) - _phi2(z))
        self.p = np.exp(np.minimum(-(lam + config.D) * ag.nodes[:, None] + config.log_survival, _EXP_CAP))
        self.beta_w = ag.weights[:, None] * config.beta_grid
        self.G = (self.beta_w * self.p).sum(axis=0)
        if np.any(self.G >= 1):
            raise PoleError("characteristic value reaches one: lambda is not above the diffusion-free bound")
        self.age_w = ag.weights
        self.x_w = config.spatial_grid.quad_weights

    def duhamel(self, psi):
        """``v(a) = int_0^a exp(-(lam + D)(a - s)) pi(s, a) psi(s) ds`` on the age grid."""
        v = np.zeros_like(psi)
        for k in range(len(psi) - 1):
            v[k + 1] = self.decay[k] * v[k] + self.w_old[k] * psi[k] + self.w_new[k] * psi[k + 1]
        return v

    def resolvent(self, eta, psi):
        """Age-space field solving the transport problem with boundary input ``eta``."""
        v = self.duhamel(psi)
        eta_t = ((self.beta_w * v).sum(axis=0) + eta) / (1.0 - self.G)
        return self.p * eta_t + v

    def apply(self, eta, psi):
        phi = self.resolvent(np.asarray(eta, float), np.asarray(psi, float))
        return np.zeros_like(eta, dtype=float), self.config.D * (phi @ self.K.T)

    def norm(self, psi) -> float:
        return float(self.age_w @ np.abs(psi) @ self.x_w)


def assemble_F_lambda_action(config: ScenarioConfig, lam: float, **kw) -> FLambdaOperator:
    return FLambdaOperator(config, lam, **kw)


def spectral_radius_F(config: ScenarioConfig, lam: float, *, alpha_star=None, operator=None) -> float:
    """``r(F_lambda)`` by power iteration from the all-ones pair."""
    op = operator or FLambdaOperator(config, lam, alpha_star=alpha_star)
    n_a, n_x = config.age_grid.n_a, config.spatial_grid.n_x
    _, psi = op.apply(np.ones(n_x), np.ones((n_a, n_x)))
    if op.norm(psi) == 0:
        return 0.0
    zero = np.zeros(n_x)
    tol = config.tolerances
    radius, _, _ = power_iteration(lambda q: op.apply(zero, q)[1], psi, op.norm, tol.power_iter_tol, tol.max_iters)
    return radius


# ---------------------------------------------------------------- homogeneous oracle


@dataclass
class HomogeneousPrediction:
    varpi: float
    lambda0_K: float
    predicted_s_B1C: float
    predicted_s_A: float
    lambda1_envelope: float

    def to_dict(self):
        return dict(self.__dict__)

    def upper_bound(self, D: float) -> float:
        """``-D lambda0 + lambda1``, an upper bound of the growth bound at rate ``D``."""
        return -D * self.lambda0_K + self.lambda1_envelope


def envelope_rate(config: ScenarioConfig) -> float:
    """Root of the Lotka sum built from the largest fertility and smallest mortality."""
    ag = config.age_grid
    beta_up = config.beta_grid.max(axis=1)
    ls = np.zeros(ag.n_a)
    ls[1:] = -np.cumsum(ag.h * config.mu_mid.min(axis=1))
    lower = -config.mu_floor if config.is_infinite_horizon else -math.inf
    roots, ok = lotka_roots(ag.weights, ag.nodes, beta_up[:, None], ls[:, None], lower)
    if not ok[0]:
        raise BracketError("envelope characteristic equation has no root")
    return float(roots[0])


def homogeneous_closed_form(config: ScenarioConfig, kernel=None) -> HomogeneousPrediction:
    """Predictions for position-independent rates from the scalar Lotka root."""
    if not config.rates_x_independent:
        raise ValueError("closed form needs rates that do not depend on position")
    ag = config.age_grid
    lower = -config.mu_floor if config.is_infinite_horizon else -math.inf
    roots, ok = lotka_roots(ag.weights, ag.nodes, config.beta_grid[:, :1], config.log_survival[:, :1], lower)
    if not ok[0]:
        raise BracketError("Lotka equation has no root")
    varpi = float(roots[0])
    kernel = kernel or build_kernel_matrix(config.kernel_spec, config.spatial_grid)
    lam0 = kernel.principal_eigenvalue
    D = config.D
    return HomogeneousPrediction(varpi, lam0, varpi - D, varpi - D * lam0, envelope_rate(config))
