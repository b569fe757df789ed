"""Numerical checks of the Hardy, Hopf, weighted interpolation and
negative-power integrability inequalities on the interval and the square."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from obslab.errors import DomainError, NoStableExponentError
from obslab.grid import Field, Grid, restrict
from obslab.norms import gradient_squared, norm

log = logging.getLogger(__name__)

# relative change allowed between a grid and its every-other-node coarsening
REFINEMENT_TOL = 0.05


@dataclass(frozen=True)
class InequalityReport:
    """One ledger row."""

    inequality_id: str
    constant: float
    sample: str
    resolution: int
    passed: bool | None = None
    detail: str = ""

    def row(self) -> dict:
        return {
            "id": self.inequality_id,
            "constant": self.constant,
            "resolution": self.resolution,
            "pass": "" if self.passed is None else str(self.passed).lower(),
        }


def _boundary_limit(field: Field) -> np.ndarray:
    """f²/d² at interior nodes, (∂_ν f)² on edges, 0 at corners."""
    grid = field.grid
    f = field.values
    d = grid.distance_to_boundary()
    out = np.zeros(grid.shape)
    inner = d > 0
    out[inner] = np.abs(f[inner]) ** 2 / d[inner] ** 2
    for axis, h in enumerate(grid.spacing):
        v = np.moveaxis(f, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[0] = np.abs((-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)) ** 2
        o[-1] = np.abs((-3.0 * v[-1] + 4.0 * v[-2] - v[-3]) / (2.0 * h)) ** 2
    if grid.dimension == 2:
        out[0, 0] = out[0, -1] = out[-1, 0] = out[-1, -1] = 0.0
    return out


def hardy_ratio(f: Field) -> float:
    """∫|∇f|² / ∫ f²/d(x,∂Ω)² for f vanishing on the boundary."""
    if not f.vanishes_on_boundary():
        raise DomainError("Hardy samples must vanish on the boundary")
    denominator = float(np.sum(f.grid.weights() * _boundary_limit(f)))
    if denominator == 0.0:
        raise DomainError("Hardy denominator vanishes (f is identically zero)")
    return gradient_squared(f) / denominator


def hopf_constant(u: Field) -> float:
    """c_u = min over interior nodes of u/d(x,∂Ω)."""
    d = u.grid.distance_to_boundary()
    inner = d > 0
    values = np.real(u.values[inner])
    if np.any(values <= 0):
        raise DomainError("u must be positive at every interior node")
    return float(np.min(values / d[inner]))


def interpolation_constant(f: Field, u: Field) -> float:
    """‖f‖ / (‖fu‖^{1/2}‖f‖_{H²}^{1/2}), the constant that makes the sample tight."""
    weighted = norm(f * u, "L2")
    h2 = norm(f, "H2")
    if weighted == 0.0 or h2 == 0.0:
        raise DomainError("interpolation denominator vanishes")
    return norm(f, "L2") / np.sqrt(weighted * h2)


# ---------------------------------------------------------------------
# Negative powers
# ---------------------------------------------------------------------


def _cell_integrals(a: np.ndarray, b: np.ndarray, h: float, delta: float) -> np.ndarray:
    """Exact ∫|v|^{-δ} over cells where v is linear from a to b."""
    out = np.empty(a.shape)
    flat = np.isclose(a, b, rtol=1e-12, atol=0.0)
    crosses = (a * b <= 0) & ~flat
    with np.errstate(divide="ignore", invalid="ignore"):
        out[flat] = h * np.abs(a[flat]) ** -delta
        rest = ~flat
        if delta == 1.0:
            anti = lambda v: np.sign(v) * np.log(np.abs(v))
        else:
            anti = lambda v: np.sign(v) * np.abs(v) ** (1.0 - delta) / (1.0 - delta)
        out[rest] = h * (anti(b[rest]) - anti(a[rest])) / (b[rest] - a[rest])
    if delta >= 1.0:
        out[crosses] = np.inf
    out[np.isnan(out)] = np.inf
    return out


def negative_power_integral(phi: Field, delta: float) -> float:
    """∫|φ|^{-δ}: exact for the piecewise-linear interpolant on the interval,
    trapezoid on the square (infinite when φ vanishes at a weighted node)."""
    if delta < 0:
        raise DomainError(f"delta must be nonnegative, got {delta}")
    values = np.real(phi.values)
    if not np.any(values):
        raise DomainError("phi is identically zero")
    if delta == 0.0:
        return float(np.sum(phi.grid.weights()))
    if phi.grid.dimension == 1:
        h = phi.grid.spacing[0]
        return float(np.sum(_cell_integrals(values[:-1], values[1:], h, delta)))
    with np.errstate(divide="ignore"):
        return float(np.sum(phi.grid.weights() * np.abs(values) ** -delta))


def _coarsen(phi: Field) -> Field:
    n = phi.grid.nodes[0]
    if phi.grid.dimension != 1:
        raise DomainError("negative-power exponents are searched on the interval")
    if n % 2 == 0 or n < 5:
        raise DomainError(f"refinement check needs an odd node count ≥ 5, got {n}")
    return restrict(phi, Grid.interval((n - 1) // 2 + 1))


def negative_power_delta(phi: Field, deltas) -> tuple[float, float]:
    """Largest δ in ``deltas`` whose integral is stable under refinement
    (relative change below 5% against the every-other-node grid)."""
    coarse = _coarsen(phi)
    best = None
    for delta in sorted(float(d) for d in deltas):
        fine_value = negative_power_integral(phi, delta)
        coarse_value = negative_power_integral(coarse, delta)
        stable = (
            np.isfinite(fine_value)
            and np.isfinite(coarse_value)
            and abs(fine_value - coarse_value) <= REFINEMENT_TOL * abs(fine_value)
        )
        log.debug("delta %.4g: %.6g vs %.6g (%s)", delta, fine_value, coarse_value, stable)
        if stable:
            best = (delta, fine_value)
    if best is None:
        raise NoStableExponentError("no exponent in the search range is refinement-stable")
    return best


def weighted_l2_bound_check(f: Field, phi: Field, delta: float) -> InequalityReport:
    """‖f‖ ≤ ‖|φ|^{-δ}‖₁^{1/(2+δ)}·‖f‖_∞^{2/(2+δ)}·‖fφ‖^{δ/(2+δ)}."""
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    lhs = norm(f, "L2")
    sup = f.max_abs()
    weighted = norm(f * phi, "L2")
    scale = sup ** (2.0 / (2.0 + delta)) * weighted ** (delta / (2.0 + delta))
    rhs = negative_power_integral(phi, delta) ** (1.0 / (2.0 + delta)) * scale
    if scale == 0.0:
        constant, rhs = 0.0, 0.0
    else:
        constant = lhs / scale
    passed = bool(lhs <= rhs * (1.0 + 1e-10))
    return InequalityReport(
        "weighted-l2",
        float(constant),
        f"delta={delta:g}",
        phi.grid.nodes[0],
        passed,
        detail=f"lhs={lhs:.17g} rhs={rhs:.17g}",
    )


# ---------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------


def hardy_report(f: Field, sample: str) -> InequalityReport:
    ratio = hardy_ratio(f)
    floor = 0.25 - 5.0 * f.grid.h
    return InequalityReport("hardy", ratio, sample, f.grid.nodes[0], bool(ratio >= floor))


def hopf_report(u: Field, sample: str) -> InequalityReport:
    c = hopf_constant(u)
    return InequalityReport("hopf", c, sample, u.grid.nodes[0], bool(c > 0))


def interpolation_report(f: Field, u: Field, sample: str) -> InequalityReport:
    return InequalityReport("interpolation", interpolation_constant(f, u), sample, f.grid.nodes[0])


def negative_power_report(phi: Field, deltas, sample: str) -> InequalityReport:
    try:
        delta, value = negative_power_delta(phi, deltas)
    except NoStableExponentError as exc:
        return InequalityReport("negative-power", float("nan"), sample, phi.grid.nodes[0], False, str(exc))
    return InequalityReport(
        "negative-power", delta, sample, phi.grid.nodes[0], True, detail=f"integral={value:.17g}"
    )


def evaluate_suite(
    checks: list[Callable[[], InequalityReport]], threads: int = 1
) -> list[InequalityReport]:
    """Run independent checks on a worker pool; rows keep the input order."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(lambda check: check(), checks))
    failed = [r for r in reports if r.passed is False]
    log.info("inequality suite: %d row(s), %d failed", len(reports), len(failed))
    return reports
