"""Age propagators for ``du/da = D (K - I) u - mu(a, .) u``."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .model import DiscreteKernelOperator, ScenarioConfig, build_kernel_matrix


class IntegrationError(RuntimeError):
    def __init__(self, message, age=None):
        super().__init__(message)
        self.age = age


@dataclass(eq=False)
class PropagatorStack:
    """``U(0, a_k)`` for every age node, shape ``(n_a, n_x, n_x)``."""

    ages: np.ndarray
    matrices: np.ndarray
    method: str
    step_count: int
    kernel: DiscreteKernelOperator | None = None
    diffusion_rate: float = 0.0

    @property
    def n_a(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_x(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, k):
        return self.matrices[k]

    def row_norms(self) -> np.ndarray:
        return np.abs(self.matrices).sum(axis=2).max(axis=1)


def step_matrices(config: ScenarioConfig, kernel_matrix: np.ndarray, D: float, mu_mid=None):
    """One-step propagators ``exp(h (D (K - I) - diag mu(a_k + h/2)))`` for each age cell.

    Returns a list; identical mortality rows share one matrix.
    """
    h = config.age_grid.h
    mu_mid = config.mu_mid if mu_mid is None else mu_mid
    n = kernel_matrix.shape[0]
    gen = D * (kernel_matrix - np.eye(n))
    cache = {}
    steps = []
    for row in mu_mid:
        key = row.tobytes()
        if key not in cache:
            if D == 0:
                cache[key] = np.diag(np.exp(-h * row))
            else:
                cache[key] = expm(h * (gen - np.diag(row)))
        steps.append(cache[key])
    return steps


def compute_diffused_propagator(
    config: ScenarioConfig, kernel_matrix: DiscreteKernelOperator | None = None, *, diffusion_rate=None
) -> PropagatorStack:
    """Integrate the matrix age equation from the identity.

    Each age cell uses the exponential of the generator frozen at the cell
    midpoint, which is second order in the age step, exact when mortality
    does not depend on age, and keeps every matrix entrywise nonnegative.
    """
    kernel_matrix = kernel_matrix or build_kernel_matrix(config.kernel_spec, config.spatial_grid)
    if kernel_matrix.matrix.shape[0] != config.spatial_grid.n_x:
        raise ValueError("kernel matrix does not match the spatial grid")
    D = config.D if diffusion_rate is None else float(diffusion_rate)
    ages = config.age_grid.nodes
    n_a, n_x = len(ages), config.spatial_grid.n_x
    out = np.empty((n_a, n_x, n_x))
    out[0] = np.eye(n_x)
    floor = min(config.mu_floor, float(config.mu_mid.min()))
    for k, step in enumerate(step_matrices(config, kernel_matrix.matrix, D)):
        out[k + 1] = step @ out[k]
        peak = np.abs(out[k + 1]).max()
        if not np.isfinite(peak) or peak > 10 * np.exp(-floor * ages[k + 1]):
            raise IntegrationError(f"propagator blew up at age {ages[k + 1]:.6g}", age=float(ages[k + 1]))
    return PropagatorStack(ages.copy(), out, "exponential-midpoint", n_a - 1, kernel_matrix, D)


def apply_propagator(stack: PropagatorStack, a_index: int, vector) -> np.ndarray:
    """``U(0, a_k) v``."""
    if not 0 <= a_index < stack.n_a:
        raise IndexError(f"age index {a_index} outside 0..{stack.n_a - 1}")
    v = np.asarray(vector, float)
    if v.shape != (stack.n_x,):
        raise ValueError(f"vector must have length {stack.n_x}")
    return stack.matrices[a_index] @ v


def restart_propagator(config: ScenarioConfig, stack: PropagatorStack, j: int, k: int) -> np.ndarray:
    """``U(a_j, a_k)`` rebuilt by stepping from the identity at ``a_j``."""
    if not 0 <= j <= k < stack.n_a:
        raise IndexError("restart needs 0 <= j <= k < n_a")
    steps = step_matrices(config, stack.kernel.matrix, stack.diffusion_rate)
    out = np.eye(stack.n_x)
    for s in steps[j:k]:
        out = s @ out
    return out


def save_stack(stack: PropagatorStack, path) -> None:
    """Binary dump: two little-endian int64 (n_a, n_x) then row-major float64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", stack.n_a, stack.n_x))
        fh.write(np.ascontiguousarray(stack.matrices, dtype="<f8").tobytes())


def load_stack(path, ages=None) -> PropagatorStack:
    data = Path(path).read_bytes()
    n_a, n_x = struct.unpack("<qq", data[:16])
    mats = np.frombuffer(data[16:], dtype="<f8")
    if mats.size != n_a * n_x * n_x:
        raise ValueError("stack file size does not match its header")
    ages = np.arange(n_a, dtype=float) if ages is None else np.asarray(ages, float)
    return PropagatorStack(ages, mats.reshape(n_a, n_x, n_x).copy(), "loaded", n_a - 1)
