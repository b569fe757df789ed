"""Stability moduli, perturbation sweeps, rate fits and certification."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from obslab.errors import DomainError, ObslabError

log = logging.getLogger(__name__)

RHO_MAX = math.exp(-1.0)
MODULUS_KINDS = ("holder", "log-power")
PIPELINE_IDS = ("wave-source", "heat-source", "heat-potential", "wave-potential", "boundary-damping")


@dataclass(frozen=True)
class StabilityModulus:
    """ρ ↦ ρ^p (Hölder) or ρ ↦ |ln ρ|^{-p} + ρ (log-power) on (0, e⁻¹]."""

    kind: str
    parameter: float

    def __post_init__(self):
        if self.kind not in MODULUS_KINDS:
            raise DomainError(f"unknown modulus kind '{self.kind}'")
        if self.kind == "holder" and not 0 < self.parameter <= 1:
            raise DomainError(f"Hölder exponent must lie in (0, 1], got {self.parameter}")
        if self.kind == "log-power" and not self.parameter > 0:
            raise DomainError(f"log power must be positive, got {self.parameter}")

    def __call__(self, rho: float) -> float:
        if not 0 < rho <= RHO_MAX * (1 + 1e-15):
            raise DomainError(f"rho = {rho!r} outside (0, 1/e]")
        if self.kind == "holder":
            return rho**self.parameter
        return abs(math.log(rho)) ** -self.parameter + rho

    def describe(self) -> str:
        return f"{self.kind}({self.parameter:.17g})"


def holder(exponent: float) -> StabilityModulus:
    return StabilityModulus("holder", exponent)


def log_power(power: float) -> StabilityModulus:
    return StabilityModulus("log-power", power)


def modulus_eval(modulus: StabilityModulus, rho: float) -> float:
    return modulus(rho)


def boundary_damping_exponent(delta: float) -> float:
    """δ/(2(2+δ)), the Hölder exponent for the edge damping recovery."""
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    return delta / (2.0 * (2.0 + delta))


def designated_modulus(pipeline: str, dimension: int = 1, delta: float = 0.5) -> StabilityModulus:
    """The modulus each pipeline is certified against; never fitted."""
    moduli = {
        "heat-potential": lambda: log_power(1.0 / (1.0 + 4.0 * dimension)),
        "wave-potential": lambda: holder(0.5),
        "boundary-damping": lambda: holder(boundary_damping_exponent(delta)),
        "wave-source": lambda: holder(1.0),
        "heat-source": lambda: log_power(0.5),
    }
    try:
        return moduli[pipeline]()
    except KeyError:
        raise DomainError(f"no designated modulus for pipeline '{pipeline}'") from None


# ---------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRecord:
    amplitude: float
    distance: float
    error: float
    seed: int
    failure: str = ""
    echo: dict = field(default_factory=dict, compare=False)

    @property
    def ok(self) -> bool:
        return not self.failure

    def row(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "distance": self.distance,
            "error": self.error,
            "seed": self.seed,
        }


# pipeline id -> row(context, amplitude, family, noise, seed) -> (distance, error)
PIPELINES: dict[str, Callable[..., tuple[float, float]]] = {}


def register_pipeline(name: str):
    def wrap(fn):
        PIPELINES[name] = fn
        return fn

    return wrap


def run_sweep(
    pipeline: str,
    family: str,
    amplitudes,
    noise: float = 0.0,
    seeds=(0,),
    threads: int = 1,
    runner: Callable[[float, str, float, int], tuple[float, float]] | None = None,
    context=None,
) -> list[SweepRecord]:
    """One twin experiment per (amplitude, seed); failed rows are recorded and
    the sweep continues. Records are sorted by amplitude, then seed.

    Without an explicit ``runner`` the registered row function is called with
    ``context`` as its first argument.
    """
    if runner is None:
        if pipeline not in PIPELINES:
            raise DomainError(f"unknown pipeline '{pipeline}' (registered: {', '.join(sorted(PIPELINES))})")
        row = PIPELINES[pipeline]

        def runner(amplitude, family, noise, seed):
            return row(context, amplitude, family, noise, seed)

    amplitudes = [float(a) for a in amplitudes]
    if not amplitudes:
        raise DomainError("sweep needs at least one amplitude")
    if any(a < 0 for a in amplitudes) or any(b >= a for a, b in zip(amplitudes, amplitudes[1:])):
        raise DomainError("amplitudes must be nonnegative and strictly decreasing")
    jobs = [(a, int(s)) for a in amplitudes for s in seeds]

    def run_row(job):
        amplitude, seed = job
        echo = {"pipeline": pipeline, "family": family, "noise": noise}
        try:
            distance, error = runner(amplitude, family, noise, seed)
        except ObslabError as exc:
            log.warning("sweep row amplitude=%g seed=%d failed: %s", amplitude, seed, exc)
            return SweepRecord(amplitude, math.nan, math.nan, seed, str(exc) or type(exc).__name__, echo)
        log.info("sweep row amplitude=%g seed=%d: distance=%.6g error=%.6g", amplitude, seed, distance, error)
        return SweepRecord(amplitude, float(distance), float(error), seed, "", echo)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(pool.map(run_row, jobs))
    return sorted(records, key=lambda r: (r.amplitude, r.seed))


# ---------------------------------------------------------------------
# Fitting and certification
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    model: str
    parameter: float
    residual: float
    intercept: float
    points: int
    low_confidence: bool


def rate_fit(records: list[SweepRecord], model: str) -> RateFit:
    """Hölder: slope of ln(error) against ln(distance). Log-power: minus the
    slope of ln(error) against ln|ln(distance)|."""
    if model not in MODULUS_KINDS:
        raise DomainError(f"unknown rate model '{model}'")
    usable = [r for r in records if r.ok and r.distance > 0 and r.error > 0]
    if model == "log-power":
        usable = [r for r in usable if r.distance < 1]
    if len(usable) < 3:
        raise DomainError(f"rate fit needs at least 3 usable records, got {len(usable)}")
    d = np.array([r.distance for r in usable])
    e = np.log([r.error for r in usable])
    x = np.log(d) if model == "holder" else np.log(np.abs(np.log(d)))
    slope, intercept = np.polyfit(x, e, 1)
    residual = float(np.sqrt(np.mean((e - (slope * x + intercept)) ** 2)))
    parameter = float(slope if model == "holder" else -slope)
    low = bool(d.max() / d.min() < 10.0)
    if low:
        log.warning("rate fit: distances span less than one decade; low confidence")
    return RateFit(model, parameter, residual, float(intercept), len(usable), low)


@dataclass(frozen=True)
class Certification:
    modulus: str
    constant: float
    passed: bool
    rows: int
    clamped: int
    skipped: int

    def as_dict(self) -> dict:
        return {
            "modulus": self.modulus,
            "constant": self.constant,
            "pass": self.passed,
            "rows": self.rows,
            "clamped": self.clamped,
            "skipped_failures": self.skipped,
        }


def certify(records: list[SweepRecord], modulus: StabilityModulus) -> Certification:
    """Smallest C with error_i ≤ C·modulus(distance_i); distances above 1/e are
    clamped to 1/e, a zero distance has modulus value 0."""
    usable = [r for r in records if r.ok]
    constant, clamped = 0.0, 0
    for r in usable:
        if r.distance < 0 or r.error < 0:
            raise DomainError("records must be nonnegative")
        if r.distance == 0:
            if r.error > 0:
                constant = math.inf
            continue
        rho = r.distance
        if rho > RHO_MAX:
            rho, clamped = RHO_MAX, clamped + 1
        constant = max(constant, r.error / modulus(rho))
    passed = math.isfinite(constant) and bool(usable)
    return Certification(
        modulus.describe(), constant, passed, len(usable), clamped, len(records) - len(usable)
    )
