"""Time convolution (Sh)(t) = ∫₀ᵗ λ(t−s)h(s)ds, its inversion through the
second-kind Volterra equation λ(0)h + λ′∗h = y′, and the amplification
constants bounding that inversion."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import uniform_filter1d

from obslab.errors import DomainError, IllPosedKernelError
from obslab.grid import Kernel, time_levels, time_norm

log = logging.getLogger(__name__)

KERNEL_FLOOR = 1e-12
START_TOL = 1e-8


def _check_dt(kernel: Kernel, dt: float):
    if not np.isclose(kernel.dt, dt, rtol=1e-12, atol=0.0):
        raise DomainError(f"kernel dt {kernel.dt} differs from series dt {dt}")


def _columns(series: np.ndarray):
    series = np.asarray(series)
    if series.ndim == 1:
        return series[:, None], True
    if series.ndim == 2:
        return series, False
    raise DomainError(f"series must be 1D or (time, nodes), got shape {series.shape}")


def _kernel_samples(kernel: Kernel, n: int) -> np.ndarray:
    if kernel.samples.size < n:
        raise DomainError(
            f"kernel has {kernel.samples.size} samples, series has {n} time levels"
        )
    return kernel.samples[:n]


def convolve(kernel: Kernel, series: np.ndarray, dt: float | None = None) -> np.ndarray:
    """Product-trapezoid quadrature of λ∗h on the uniform grid; y[0] = 0 exactly."""
    if dt is not None:
        _check_dt(kernel, dt)
    cols, scalar = _columns(series)
    n = cols.shape[0]
    lam = _kernel_samples(kernel, n)
    out = np.zeros(cols.shape, dtype=np.result_type(lam, cols, float))
    for j in range(cols.shape[1]):
        h = cols[:, j]
        full = np.convolve(lam, h)[:n]
        out[:, j] = kernel.dt * (full - 0.5 * lam * h[0] - 0.5 * lam[0] * h)
        out[0, j] = 0.0
    return out[:, 0] if scalar else out


def smooth(series: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average of odd width along time, re-anchored so y(0) = 0."""
    if width < 1 or width % 2 == 0:
        raise DomainError(f"smoothing width must be a positive odd integer, got {width}")
    series = np.asarray(series)
    if width == 1:
        return series

    def filt(a):
        return uniform_filter1d(a, size=width, axis=0, mode="nearest")

    out = filt(series.real) + 1j * filt(series.imag) if np.iscomplexobj(series) else filt(series)
    return out - out[0]


def _solve_column(lam0, dk: np.ndarray, dy: np.ndarray, dt: float) -> np.ndarray:
    n = dy.size
    h = np.zeros(n, dtype=np.result_type(dk, dy, float))
    h[0] = dy[0] / lam0
    diag = lam0 + 0.5 * dt * dk[0]
    for i in range(1, n):
        history = 0.5 * dk[i] * h[0]
        if i > 1:
            history += np.dot(dk[i - 1 : 0 : -1], h[1:i])
        h[i] = (dy[i] - dt * history) / diag
    return h


def deconvolve(
    kernel: Kernel,
    series: np.ndarray,
    dt: float | None = None,
    smoothing: int = 1,
) -> np.ndarray:
    """Recover h from y = λ∗h by differentiating and solving the second-kind equation.

    Trace-valued series (time × nodes) are processed one column at a time.
    """
    if dt is not None:
        _check_dt(kernel, dt)
    lam0 = kernel.value0
    if abs(lam0) < KERNEL_FLOOR:
        raise IllPosedKernelError(f"kernel vanishes at t = 0 (|λ(0)| = {abs(lam0):.3e})")
    cols, scalar = _columns(series)
    scale = max(1.0, float(np.max(np.abs(cols)))) if cols.size else 1.0
    start = float(np.max(np.abs(cols[0])))
    if start > START_TOL * scale:
        raise DomainError(f"series must start at 0 (|y(0)| = {start:.3e})")
    n = cols.shape[0]
    if n < 3:
        raise DomainError("deconvolution needs at least 3 time levels")

    cols = smooth(cols, smoothing)
    dk = np.gradient(_kernel_samples(kernel, n), kernel.dt, edge_order=2)
    dy = np.gradient(cols, kernel.dt, axis=0, edge_order=2)
    out = np.zeros(cols.shape, dtype=np.result_type(dk, dy, float))
    for j in range(cols.shape[1]):
        out[:, j] = _solve_column(lam0, dk, dy[:, j], kernel.dt)
    log.debug("deconvolved %d column(s) over %d time levels", cols.shape[1], n)
    return out[:, 0] if scalar else out


# ---------------------------------------------------------------------
# Amplification constants
# ---------------------------------------------------------------------


def derivative_energy(kernel: Kernel, tau: float) -> float:
    """‖λ′‖²_{L²(0,τ)} from centered differences and trapezoid quadrature."""
    n = time_levels(tau, kernel.dt)
    dk = np.gradient(_kernel_samples(kernel, n), kernel.dt, edge_order=2)
    return float(trapezoid(np.abs(dk) ** 2, dx=kernel.dt))


def _growth(kernel: Kernel, tau: float) -> float:
    lam0 = abs(kernel.value0)
    if lam0 < KERNEL_FLOOR:
        raise IllPosedKernelError(f"kernel vanishes at t = 0 (|λ(0)| = {lam0:.3e})")
    with np.errstate(over="ignore"):
        return float(np.exp(tau * derivative_energy(kernel, tau) / lam0**2))


def amplification_constant(kernel: Kernel, tau: float, kappa: float) -> float:
    """√2/(κ|λ(0)|)·exp(τ‖λ′‖²/|λ(0)|²)."""
    if not kappa > 0:
        raise DomainError(f"observability constant must be positive, got {kappa}")
    return float(np.sqrt(2.0) / (kappa * abs(kernel.value0)) * _growth(kernel, tau))


def dual_norm_amplification(kernel: Kernel, tau: float, kappa: float = 1.0) -> float:
    """κ̃|λ(0)|·exp(τ‖λ′‖²/|λ(0)|²), the bound for data measured in a dual norm."""
    if not kappa > 0:
        raise DomainError(f"observability constant must be positive, got {kappa}")
    return float(kappa * abs(kernel.value0) * _growth(kernel, tau))


@dataclass(frozen=True, eq=False)
class ConvolutionProblem:
    """Observed y = λ∗h on (0, τ), scalar or trace valued."""

    kernel: Kernel
    series: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        series = np.asarray(self.series)
        _columns(series)
        _kernel_samples(self.kernel, series.shape[0])
        object.__setattr__(self, "series", series)

    @property
    def dt(self) -> float:
        return self.kernel.dt

    @property
    def tau(self) -> float:
        return self.dt * (self.series.shape[0] - 1)

    def solve(self, smoothing: int = 1) -> np.ndarray:
        return deconvolve(self.kernel, self.series, smoothing=smoothing)

    def gronwall_holds(self, solution: np.ndarray | None = None) -> bool:
        """‖h‖_{L²} ≤ amplification(λ, τ, 1)·‖y‖_{H¹} for the computed h."""
        h = self.solve() if solution is None else solution
        lhs = time_norm(h, self.dt, self.weights)
        rhs = amplification_constant(self.kernel, self.tau, 1.0) * time_norm(
            self.series, self.dt, self.weights, order=1
        )
        return lhs <= rhs * (1.0 + 1e-10)
