"""Inverse source and coefficient pipelines.

Every pipeline follows the same route: deconvolve the measured trace with the
known time kernel, fit the deconvolved series against a spectral dictionary
of eigenfunction traces, then truncate and reconstruct.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from obslab.errors import (
    DomainError,
    NumericalError,
    RankDeficientError,
    StagnationError,
)
from obslab.forward import (
    Coefficients,
    Probe,
    ProbeResponseSet,
    initial_to_boundary,
)
from obslab.grid import BoundaryTrace, Field, Grid, Kernel, trapezoid_weights
from obslab.inequalities import interpolation_constant
from obslab.norms import dual_v_norm, norm
from obslab.operators import edge_density, trace_operator
from obslab.spectral import EigenBasis, mixed_square_eigenpairs, mixed_square_eigenvalue
from obslab.stability import RHO_MAX, boundary_damping_exponent, designated_modulus
from obslab.volterra import amplification_constant, convolve, deconvolve

log = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
ALPHA_FLOOR = 1e-12
ALPHA_CANDIDATES = 25


@dataclass(frozen=True)
class RecoveryConfig:
    """Knobs shared by the inverse pipelines."""

    probe_count: int = 10
    truncation: int = 1
    tikhonov: float | None = None
    epsilon: float = 1.0
    s: float = 1.0
    noise_level: float = 0.0
    basis_modes: int = 20
    threshold: float = 0.1
    smoothing: int = 1
    delta: float = 0.5
    damping_lower: float = 0.01
    damping_upper: float = 2.0
    profile_nodes: int = 2
    max_iterations: int = 30
    misfit_tolerance: float = 0.05
    holder_constant: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.probe_count >= self.truncation >= 1:
            problems.append(f"need probe_count ≥ truncation ≥ 1, got {self.probe_count}, {self.truncation}")
        if not self.epsilon >= 1:
            problems.append(f"epsilon must be ≥ 1, got {self.epsilon}")
        if not self.s >= 1:
            problems.append(f"s must be ≥ 1, got {self.s}")
        if self.noise_level < 0:
            problems.append("noise_level must be nonnegative")
        if self.tikhonov is not None and not self.tikhonov > 0:
            problems.append("tikhonov weight must be positive")
        if self.basis_modes < 1:
            problems.append("basis_modes must be positive")
        if not 0 < self.threshold < 1:
            problems.append("threshold must lie in (0, 1)")
        if self.smoothing < 1 or self.smoothing % 2 == 0:
            problems.append("smoothing must be a positive odd integer")
        if not 0 < self.delta <= 1:
            problems.append("delta must lie in (0, 1]")
        if not 0 <= self.damping_lower < self.damping_upper:
            problems.append("need 0 ≤ damping_lower < damping_upper")
        if self.profile_nodes < 2:
            problems.append("profile_nodes must be at least 2")
        if self.max_iterations < 1:
            problems.append("max_iterations must be positive")
        if problems:
            raise DomainError("; ".join(problems))


@dataclass(frozen=True, eq=False)
class RecoveryResult:
    fields: dict[str, Field]
    coefficients: dict[str, np.ndarray]
    residuals: dict[str, float]
    bound: float
    certificates: dict[str, float | None] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.bound >= 0:
            raise NumericalError(f"certified bound must be nonnegative, got {self.bound}")

    def results(self) -> dict:
        coefficients = {}
        for name, c in self.coefficients.items():
            c = np.asarray(c)
            if np.iscomplexobj(c):
                coefficients[name] = {"re": c.real.tolist(), "im": c.imag.tolist()}
            else:
                coefficients[name] = c.tolist()
        return {
            "coefficients": coefficients,
            "residuals": dict(self.residuals),
            "bound": self.bound,
            "fields": {name: norm(f, "L2") for name, f in self.fields.items()},
        }


# ---------------------------------------------------------------------
# Truncation rules
# ---------------------------------------------------------------------


def heat_mode_count(epsilon: float, dimension: int) -> int:
    """The integer k with k ≤ ε^{n/2} < k+1."""
    if not epsilon >= 1:
        raise DomainError(f"epsilon must be ≥ 1, got {epsilon}")
    return int(math.floor(epsilon ** (dimension / 2.0)))


def level_from_s(s: float) -> int:
    """The integer ℓ with ℓ ≤ s < ℓ+1."""
    if not s >= 1:
        raise DomainError(f"s must be ≥ 1, got {s}")
    return int(math.floor(s))


def epsilon_from_s(s: float, dimension: int) -> float:
    """ε = s^{3/n+1}."""
    if not s >= 1:
        raise DomainError(f"s must be ≥ 1, got {s}")
    return s ** (3.0 / dimension + 1.0)


def tail_energy_bound(bound: float, level: int, dimension: int) -> float:
    """N²/(ℓ+1)^{2/n}: the energy beyond mode ℓ of a perturbation with W^{1,∞} norm ≤ N."""
    return bound**2 / (level + 1) ** (2.0 / dimension)


def discarded_tail_energy(f: Field, basis: EigenBasis, level: int) -> float:
    """‖f‖² − Σ_{k≤ℓ}(f, φ_k)², the energy a level-ℓ truncation leaves out."""
    c = basis.coefficients(f, level)
    return max(0.0, norm(f, "L2") ** 2 - float(np.sum(np.abs(c) ** 2)))


# ---------------------------------------------------------------------
# Spectral fit
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralFit:
    coefficients: np.ndarray
    alpha: float
    residual: float
    singular_values: np.ndarray

    @property
    def condition(self) -> float:
        return float(self.singular_values[0] / self.singular_values[-1])


def tikhonov_fit(
    matrix: np.ndarray,
    data: np.ndarray,
    *,
    noise_level: float,
    tau: float,
    boundary_measure: float,
    tikhonov: float | None = None,
) -> SpectralFit:
    """Regularized least squares through the SVD.

    The weight is tikhonov·σ_max² when given. Otherwise the discrepancy
    principle picks the largest α_j = σ_max²·10^{-j/2} whose residual is
    within 2δ, δ = noise·√(τ|Γ|), with a floor of 10⁻¹²·σ_max².
    """
    u, sv, vt = np.linalg.svd(matrix, full_matrices=False)
    condition = math.inf if sv[-1] == 0 else float(sv[0] / sv[-1])
    if condition > CONDITION_LIMIT:
        raise RankDeficientError(condition)
    beta = u.conj().T @ data
    top = sv[0] ** 2

    def solve(alpha):
        return vt.conj().T @ (sv / (sv**2 + alpha) * beta)

    def residual(c):
        return float(np.linalg.norm(matrix @ c - data))

    if tikhonov is not None:
        alpha = tikhonov * top
    else:
        alpha = ALPHA_FLOOR * top
        if noise_level > 0:
            target = 2.0 * noise_level * math.sqrt(tau * boundary_measure)
            for j in range(ALPHA_CANDIDATES):
                candidate = top * 10.0 ** (-j / 2.0)
                if residual(solve(candidate)) <= target:
                    alpha = max(candidate, alpha)
                    break
    c = solve(alpha)
    res = residual(c)
    log.debug("spectral fit: %d modes, alpha = %.3e, residual = %.3e, cond = %.3e",
              c.size, alpha, res, condition)
    return SpectralFit(c, float(alpha), res, sv)


def _mode_traces(basis: EigenBasis, label: str, count: int) -> np.ndarray:
    """∂_νφ_k on the label, one row per mode."""
    tr = trace_operator(basis.grid, label)
    return np.array([tr(f.values) for f in basis.functions[:count]])


def _profiles(kind: str, eigenvalues: np.ndarray, times: np.ndarray) -> np.ndarray:
    if kind == "heat":
        return np.exp(-np.outer(times, eigenvalues))
    if np.any(eigenvalues <= 0):
        raise DomainError("wave dictionaries need positive eigenvalues (q ≥ 0)")
    return np.cos(np.outer(times, np.sqrt(eigenvalues)))


@dataclass(frozen=True, eq=False)
class _Stage:
    fit: SpectralFit
    misfit: float
    kappa: float
    bound: float
    amplification: float


def _fit_stage(
    kind: str,
    kernel: Kernel,
    series: np.ndarray,
    template: BoundaryTrace,
    basis: EigenBasis,
    count: int,
    config: RecoveryConfig,
) -> _Stage:
    """Deconvolve z = kernel∗h, fit h against the time-profiled mode traces and
    bound the fit error by the amplification constant times the H¹ misfit."""
    levels = series.shape[0]
    dt = template.dt
    tau = dt * (levels - 1)
    h = deconvolve(kernel, series, smoothing=config.smoothing)
    modes = _mode_traces(basis, template.label, count)
    if modes.shape[1] != series.shape[1]:
        raise DomainError("trace nodes do not match the inversion grid boundary")
    profiles = _profiles(kind, np.asarray(basis.eigenvalues[:count]), dt * np.arange(levels))
    dictionary = (profiles[:, None, :] * modes.T[None, :, :]).reshape(-1, count)
    sw = np.sqrt(np.outer(trapezoid_weights(levels, dt), template.weights)).reshape(-1)
    weighted = dictionary * sw[:, None]
    fit = tikhonov_fit(
        weighted,
        h.reshape(-1) * sw,
        noise_level=config.noise_level,
        tau=tau,
        boundary_measure=float(np.sum(template.weights)),
        tikhonov=config.tikhonov,
    )
    fitted = (dictionary @ fit.coefficients).reshape(series.shape)
    misfit = template.with_values(series - convolve(kernel, fitted)).norm("H1")
    kappa = float(np.min(np.linalg.norm(weighted, axis=0)))
    amp = amplification_constant(kernel, tau, kappa)
    return _Stage(fit, misfit, kappa, amp * misfit, amp)


def _time_derivative(trace: BoundaryTrace) -> np.ndarray:
    z = np.gradient(trace.values, trace.dt, axis=0, edge_order=2)
    z[0] = 0.0
    return z


def _check_basis(q: Field | None, basis: EigenBasis):
    if q is None:
        return
    if q.grid != basis.grid or not np.allclose(q.values, basis.potential.values, atol=1e-12):
        raise DomainError("basis was not computed for this potential")


# ---------------------------------------------------------------------
# Source pipelines
# ---------------------------------------------------------------------


def recover_source_wave(
    q: Field | None,
    kernel: Kernel,
    trace: BoundaryTrace,
    basis: EigenBasis,
    config: RecoveryConfig,
) -> RecoveryResult:
    """f from the trace of u_tt − Δu + qu = g(t)f(x) with zero initial data.

    ∂_t v = g∗w with w started from (f, 0), so the time derivative of the
    trace is deconvolved and fitted against cos(√λ_k t)·∂_νφ_k.
    """
    _check_basis(q, basis)
    stage = _fit_stage("wave", kernel, _time_derivative(trace), trace, basis, len(basis), config)
    level = min(config.truncation, len(basis))
    c = stage.fit.coefficients[:level]
    log.info("wave source: %d mode(s) fitted, %d kept, bound %.3e", len(basis), level, stage.bound)
    return RecoveryResult(
        fields={"f": basis.synthesize(c)},
        coefficients={"f": c},
        residuals={"f": stage.misfit},
        bound=stage.bound,
        certificates={"amplification": stage.amplification, "kappa": stage.kappa},
        diagnostics={
            "alpha": stage.fit.alpha,
            "condition": stage.fit.condition,
            "fitted_coefficients": stage.fit.coefficients.tolist(),
        },
    )


def recover_source_heat(
    q: Field | None,
    kernel: Kernel,
    trace: BoundaryTrace,
    basis: EigenBasis,
    config: RecoveryConfig,
) -> RecoveryResult:
    """f from the trace of u_t − Δu + qu = g(t)f(x), keeping k ≤ ε^{n/2} modes."""
    _check_basis(q, basis)
    requested = heat_mode_count(config.epsilon, basis.grid.dimension)
    count = min(requested, len(basis))
    if count < requested:
        log.warning("heat source: %d mode(s) requested, basis holds %d", requested, len(basis))
    stage = _fit_stage("heat", kernel, trace.values, trace, basis, count, config)
    c = stage.fit.coefficients
    sensitivity = heat_sensitivity(basis.eigenvalues[:count], trace.tau)
    flagged = flag_modes(sensitivity, config.noise_level)
    if flagged:
        log.warning("heat source: mode(s) %s exceed credible conditioning", flagged)
    return RecoveryResult(
        fields={"f": basis.synthesize(c)},
        coefficients={"f": c},
        residuals={"f": stage.misfit},
        bound=stage.bound,
        certificates={"amplification": stage.amplification, "kappa": stage.kappa},
        diagnostics={
            "alpha": stage.fit.alpha,
            "condition": stage.fit.condition,
            "singular_values": stage.fit.singular_values.tolist(),
            "sensitivity": sensitivity.tolist(),
            "flagged_modes": flagged,
        },
    )


def heat_sensitivity(eigenvalues, tau: float) -> np.ndarray:
    """e^{λ_kτ}: how much mode k's coefficient amplifies an error in u(τ)."""
    with np.errstate(over="ignore"):
        return np.exp(np.asarray(eigenvalues, dtype=float) * tau)


def flag_modes(sensitivity: np.ndarray, noise_level: float) -> list[int]:
    """1-based modes whose sensitivity times the noise floor exceeds one."""
    floor = max(noise_level, 2.0**-52)
    return [k + 1 for k, e in enumerate(sensitivity) if e * floor > 1.0]


# ---------------------------------------------------------------------
# Potential pipelines
# ---------------------------------------------------------------------


def _probe_eigenvalue(probe: Probe, basis: EigenBasis, index: int) -> float:
    if probe.eigenvalue is not None:
        return float(probe.eigenvalue)
    mode = probe.mode if isinstance(probe.mode, int) else index + 1
    return basis.mode(mode)[0]


def _probe_stages(responses: ProbeResponseSet, run, threads: int):
    """Run ``run(index, response)`` per probe; failures skip the probe."""

    def attempt(item):
        index, response = item
        try:
            return run(index, response)
        except NumericalError as exc:
            log.warning("probe %s skipped: %s", response.probe.probe_id, exc)
            return exc

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(attempt, enumerate(responses)))


def recover_potential_heat(
    q_ref: Field,
    responses: ProbeResponseSet,
    basis: EigenBasis,
    config: RecoveryConfig,
    threads: int = 1,
) -> RecoveryResult:
    """q̃ from N(q̃) − N(q_ref) on eigenfunction probes of −Δ+q_ref.

    Probe k's difference solves the heat equation with source
    −(q̃−q)φ_k e^{−λ_k t}, so m_k = (q̃−q, φ_k) = −∫F̂_k.
    """
    _check_basis(q_ref, basis)
    dimension = basis.grid.dimension
    level = level_from_s(config.s)
    epsilon = epsilon_from_s(config.s, dimension)
    count = min(heat_mode_count(epsilon, dimension), len(basis))
    if len(responses) < level:
        raise DomainError(f"{len(responses)} probe(s) cannot resolve {level} mode(s)")
    integrals = basis.matrix(count) @ basis.grid.weights().reshape(-1)

    def run(index, response):
        lam = _probe_eigenvalue(response.probe, basis, index)
        trace = response.trace
        kernel = Kernel(np.exp(-lam * trace.times), trace.dt)
        stage = _fit_stage("heat", kernel, trace.values, trace, basis, count, config)
        return -float(np.real(stage.fit.coefficients @ integrals)), stage

    outcomes = _probe_stages(responses, run, threads)
    m = np.zeros(len(responses))
    skipped, bounds, misfits = [], [], []
    for k, outcome in enumerate(outcomes):
        if isinstance(outcome, Exception):
            skipped.append(responses[k].probe.probe_id)
            continue
        m[k], stage = outcome
        misfits.append(stage.misfit)
        if k < level:
            bounds.append(stage.bound)
    kept = m[:level]
    q_hat = q_ref + basis.synthesize(kept)

    rho = responses.distance("H1")
    theta = designated_modulus("heat-potential", dimension)
    certificate = 0.0 if rho == 0 else config.holder_constant * theta(min(rho, RHO_MAX))
    log.info("heat potential: ℓ = %d, ε = %.6g, %d fit mode(s), distance %.3e", level, epsilon, count, rho)
    return RecoveryResult(
        fields={"q": q_hat, "dq": q_hat - q_ref},
        coefficients={"q": kept},
        residuals={"q": max(misfits, default=0.0)},
        bound=float(np.sqrt(np.sum(np.square(bounds)))),
        certificates={"theta": certificate, "distance": rho},
        diagnostics={
            "level": level,
            "epsilon": epsilon,
            "fit_modes": count,
            "all_coefficients": m.tolist(),
            "skipped_probes": skipped,
            "modulus": theta.describe(),
        },
    )


def _combine_probes(
    products: list[np.ndarray],
    probes: list[np.ndarray],
    basis: EigenBasis,
    level: int,
    threshold: float,
) -> Field:
    """Estimate g from products G_k ≈ g·φ_k.

    Pointwise least squares where √Σφ_k² ≥ θ·max, and the level-ℓ spectral
    least-squares fit of Σ b_jφ_j·φ_k against G_k elsewhere.
    """
    grid = basis.grid
    phi = np.array(probes)
    g = np.array(products)
    energy = np.sum(phi**2, axis=0)
    root = np.sqrt(energy)
    inside = root >= threshold * root.max()
    pointwise = np.zeros(grid.shape)
    pointwise[inside] = np.sum(phi * g, axis=0)[inside] / energy[inside]

    sw = np.sqrt(grid.weights().reshape(-1))
    modes = basis.matrix(level)
    a = np.concatenate([(sw * p.reshape(-1))[:, None] * modes.T for p in phi])
    rhs = np.concatenate([sw * gk.reshape(-1) for gk in g])
    b, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    fill = (b @ modes).reshape(grid.shape)
    return Field(grid, np.where(inside, pointwise, fill))


def recover_potential_damping_wave(
    q_ref: Field,
    responses: ProbeResponseSet,
    basis: EigenBasis,
    config: RecoveryConfig,
    threads: int = 1,
) -> RecoveryResult:
    """(q̃, ã) from Λ(q̃,ã) − Λ(q_ref,0) on probes (φ_k, i√λ_kφ_k).

    The difference carries the source −[(q̃−q) + i√λ_k ã]φ_k e^{i√λ_k t};
    its real part gives (q̃−q)φ_k, its imaginary part over √λ_k gives ãφ_k.
    """
    _check_basis(q_ref, basis)
    count = len(basis)
    level = min(config.truncation, count)

    def run(index, response):
        lam = _probe_eigenvalue(response.probe, basis, index)
        trace = response.trace
        kernel = Kernel(np.exp(1j * np.sqrt(lam) * trace.times), trace.dt)
        stage = _fit_stage("wave", kernel, _time_derivative(trace), trace, basis, count, config)
        source = basis.synthesize(stage.fit.coefficients).values
        return lam, source, stage

    outcomes = _probe_stages(responses, run, threads)
    gq, ga, phis = [], [], []
    skipped, ratios, bounds, misfits = [], [], [], []
    for k, outcome in enumerate(outcomes):
        probe = responses[k].probe
        if isinstance(outcome, Exception):
            skipped.append(probe.probe_id)
            continue
        lam, source, stage = outcome
        gq.append(-source.real)
        ga.append(-source.imag / np.sqrt(lam))
        phis.append(np.real(probe.u0.values))
        re, im = np.linalg.norm(source.real), np.linalg.norm(source.imag)
        ratios.append(0.0 if im == 0 else (math.inf if re == 0 else im / re))
        bounds.append(stage.bound)
        misfits.append(stage.misfit)
    if not phis:
        raise NumericalError("every probe failed; nothing to reconstruct")

    dq = _combine_probes(gq, phis, basis, level, config.threshold)
    a_hat = _combine_probes(ga, phis, basis, level, config.threshold)
    rho = responses.distance("H1")
    certificates: dict[str, float | None] = {
        "holder": config.holder_constant * math.sqrt(rho),
        "distance": rho,
    }
    ground = basis.mode(1)[1]
    for name, f in (("interpolation_q", dq), ("interpolation_a", a_hat)):
        certificates[name] = interpolation_constant(f, ground) if f.max_abs() > 0 else None
    log.info("wave potential+damping: %d probe(s), imaginary ratio %.3e", len(phis), max(ratios))
    return RecoveryResult(
        fields={"q": q_ref + dq, "dq": dq, "a": a_hat},
        coefficients={"q": basis.coefficients(dq, level), "a": basis.coefficients(a_hat, level)},
        residuals={"source": max(misfits)},
        bound=max(bounds),
        certificates=certificates,
        diagnostics={
            "imaginary_ratio": max(ratios),
            "threshold": config.threshold,
            "skipped_probes": skipped,
        },
    )


# ---------------------------------------------------------------------
# Boundary damping
# ---------------------------------------------------------------------


def edge_profiles(params: np.ndarray, grid: Grid, control: int) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-linear a1(x), a2(y) through ``control`` points sharing the corner.

    ``params`` holds the corner value, then a1's and a2's remaining points.
    """
    params = np.asarray(params, dtype=float)
    if params.size != 2 * control - 1:
        raise DomainError(f"expected {2 * control - 1} parameters, got {params.size}")
    knots = np.linspace(0.0, 1.0, control)
    a1 = np.concatenate([params[:1], params[1:control]])
    a2 = np.concatenate([params[:1], params[control:]])
    x, y = grid.axes
    return np.interp(x, knots, a1), np.interp(y, knots, a2)


def square_probes(grid: Grid, modes: list[tuple[int, int]]) -> list[Probe]:
    """Probes (φ_kℓ, 0) on the square."""
    probes = []
    for k, l in modes:
        lam, phi = mixed_square_eigenpairs(grid, k, l)
        probes.append(Probe(f"phi{k}{l}", phi, mode=(k, l), eigenvalue=lam))
    return probes


def _flatten(responses: ProbeResponseSet) -> np.ndarray:
    return np.concatenate([
        (np.sqrt(np.outer(trapezoid_weights(t.values.shape[0], t.dt), t.weights)) * t.values).reshape(-1)
        for t in responses.traces
    ])


def recover_boundary_damping(
    responses: ProbeResponseSet,
    config: RecoveryConfig,
    *,
    tau: float,
    dt: float | None = None,
    threads: int = 1,
) -> RecoveryResult:
    """Edge damping (a1, a2) from Λ(a) − Λ(0) by projected Levenberg–Marquardt."""
    if not len(responses):
        raise DomainError("boundary damping needs at least one probe")
    grid = responses[0].probe.u0.grid
    probes = [r.probe for r in responses]
    label = responses.label
    dt = responses.dt if dt is None else dt
    control = config.profile_nodes
    lower, upper = config.damping_lower, config.damping_upper
    data = _flatten(responses)
    data_norm = float(np.linalg.norm(data))

    undamped = initial_to_boundary(
        "square", grid, Coefficients(), probes, tau=tau, dt=dt, label=label, threads=threads
    )

    def model(params) -> ProbeResponseSet:
        a1, a2 = edge_profiles(params, grid, control)
        damped = initial_to_boundary(
            "square", grid, Coefficients(a1=a1, a2=a2), probes,
            tau=tau, dt=dt, label=label, threads=threads,
        )
        return damped.difference(undamped)

    def residual(params) -> np.ndarray:
        return _flatten(model(params)) - data

    params = np.full(2 * control - 1, lower)
    history: list[dict] = []
    if data_norm == 0.0:
        log.info("boundary damping: zero data, returning the lower bound")
    else:
        params = np.full(2 * control - 1, 0.5 * (lower + upper))
        params = _levenberg_marquardt(residual, params, lower, upper, data_norm, config, history)
        misfit = history[-1]["misfit"] if history else 0.0
        if misfit > config.misfit_tolerance:
            raise StagnationError(
                f"relative misfit {misfit:.3e} above tolerance {config.misfit_tolerance}", history
            )

    a1, a2 = edge_profiles(params, grid, control)
    x, y = grid.axes
    loads = []
    for probe in probes:
        lam = probe.eigenvalue if probe.eigenvalue is not None else mixed_square_eigenvalue(*probe.mode)
        phi = probe.u0.values
        loads.append(dual_v_norm(grid, -np.sqrt(lam) * edge_density(grid, a1 * phi[:, 0], a2 * phi[0, :])))
    rho = responses.distance("L2")
    exponent = boundary_damping_exponent(config.delta)
    if lower > 0:
        holder = config.holder_constant * (rho / lower) ** exponent
    else:
        holder = None
    log.info("boundary damping: corner %.6g, distance %.3e", params[0], rho)
    return RecoveryResult(
        fields={
            "a1": Field(Grid.interval(len(x)), a1),
            "a2": Field(Grid.interval(len(y)), a2),
        },
        coefficients={"a": params},
        residuals={"a": history[-1]["misfit"] if history else 0.0},
        bound=math.inf if holder is None else holder,
        certificates={"holder": holder, "exponent": exponent, "distance": rho, "dual_norm": max(loads)},
        diagnostics={"iterations": len(history), "history": history},
    )


def _levenberg_marquardt(residual, params, lower, upper, data_norm, config, history) -> np.ndarray:
    """Damped Gauss–Newton with a forward-difference Jacobian, clipped to [lower, upper]."""
    params = np.clip(params, lower, upper)
    r = residual(params)
    cost = float(r @ r)
    mu = 1e-3
    for iteration in range(1, config.max_iterations + 1):
        jac = np.empty((r.size, params.size))
        for i in range(params.size):
            step = 1e-6 * max(1.0, abs(params[i]))
            if params[i] + step > upper:
                step = -step
            shifted = params.copy()
            shifted[i] += step
            jac[:, i] = (residual(shifted) - r) / step
        normal = jac.T @ jac
        gradient = jac.T @ r
        improved = False
        while mu < 1e12:
            damping = mu * (np.diag(np.diag(normal)) + 1e-12 * np.eye(params.size))
            trial = np.clip(params + np.linalg.solve(normal + damping, -gradient), lower, upper)
            rt = residual(trial)
            trial_cost = float(rt @ rt)
            if trial_cost < cost:
                improved = True
                break
            mu *= 4.0
        moved = 0.0
        decrease = 0.0
        if improved:
            moved = float(np.linalg.norm(trial - params) / max(np.linalg.norm(params), 1e-300))
            decrease = (cost - trial_cost) / cost
            params, r, cost = trial, rt, trial_cost
            mu /= 3.0
        misfit = math.sqrt(cost) / data_norm
        history.append({"iteration": iteration, "misfit": misfit, "step": moved, "mu": mu})
        log.info("LM iteration %d: misfit %.4e, step %.3e", iteration, misfit, moved)
        if not improved or moved < 1e-10 or decrease < 1e-10:
            break
    return params
