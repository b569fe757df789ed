"""One job per CLI subcommand.

A job reads the validated config, runs the module operations, writes its
CSV/JSON files into the locked output directory and returns the report body
(results, certificates, diagnostics). Twin experiments shared by the invert
jobs and the stability sweep live on ``Lab``.
"""

import logging
import math
from dataclasses import asdict, replace
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from obslab.config import SECTIONS, Coefficient, ExperimentConfig, serialize
from obslab.errors import ConfigError, DomainError, Violation
from obslab.expressions import parse_coefficient
from obslab.forward import (
    Coefficients,
    Probe,
    default_dt,
    neumann_trace,
    solve_heat,
    solve_wave,
    solve_wave_boundary_damped,
    wave_energy,
)
from obslab.grid import Field, Grid, Kernel, time_norm
from obslab.inequalities import (
    evaluate_suite,
    hardy_report,
    hopf_report,
    interpolation_report,
    negative_power_report,
    weighted_l2_bound_check,
)
from obslab.noise import Xoshiro256StarStar, add_noise
from obslab.norms import gradient_squared, norm
from obslab.recovery import (
    RecoveryResult,
    epsilon_from_s,
    heat_mode_count,
    recover_boundary_damping,
    recover_potential_damping_wave,
    recover_potential_heat,
    recover_source_heat,
    recover_source_wave,
    square_probes,
)
from obslab.reporting import OutputDirectory, RunManifest, config_hash, read_csv
from obslab.spectral import EigenBasis, dirichlet_eigenpairs, mixed_square_modes
from obslab.stability import (
    PIPELINE_IDS,
    StabilityModulus,
    SweepRecord,
    certify,
    designated_modulus,
    rate_fit,
    register_pipeline,
    run_sweep,
)
from obslab.twin import TwinSetup
from obslab.volterra import (
    ConvolutionProblem,
    amplification_constant,
    convolve,
    deconvolve,
    derivative_energy,
)

log = logging.getLogger(__name__)

OPERATOR_NORM_NOTE = "supremum over a finite probe dictionary (under-estimates the operator norm)"

SWEEP_FAMILIES = {
    "heat-potential": ("mode", "bump"),
    "wave-potential": ("damping", "potential"),
    "boundary-damping": ("constant",),
    "wave-source": ("mode",),
    "heat-source": ("mode",),
}


def _config_error(key: str, constraint: str) -> ConfigError:
    return ConfigError([Violation(None, key, constraint)])


def mode_budget(config: ExperimentConfig) -> int:
    """Eigenpairs to compute per grid: enough for the dictionary, the probes and the heat truncation."""
    r = config.recovery
    dimension = config.grid.dimension
    count = max(r.basis_modes, r.probe_count, r.truncation)
    pipeline = config.experiment.pipeline
    if pipeline == "heat-source":
        count = max(count, heat_mode_count(r.epsilon, dimension))
    elif pipeline == "heat-potential":
        count = max(count, heat_mode_count(epsilon_from_s(r.s, dimension), dimension))
    return count


def relative_error(estimate: Field, truth: Field) -> float:
    """‖estimate − truth‖/‖truth‖, or the absolute error when the truth vanishes."""
    scale = norm(truth, "L2")
    error = norm(estimate - truth, "L2")
    return error / scale if scale > 0 else error


class GridContext:
    """Reference potential, its eigenbasis and coefficient expressions on one grid.

    ``phiK`` in an expression is the K-th eigenfunction of −Δ+q_ref here; in
    the expression for q_ref itself it is the K-th eigenfunction of −Δ.
    """

    def __init__(self, grid: Grid, config: ExperimentConfig):
        self.grid = grid
        self.config = config
        free = int(np.prod([n - 2 for n in grid.nodes]))
        self.modes = min(free, mode_budget(config))

    @cached_property
    def laplacian_basis(self) -> EigenBasis:
        return dirichlet_eigenpairs(self.grid, None, self.modes)

    @cached_property
    def q_ref(self) -> Field:
        expr = parse_coefficient(self.config.coefficients.q)
        return expr.on_grid(self.grid, lambda k: self.laplacian_basis.mode(k)[1])

    @cached_property
    def basis(self) -> EigenBasis:
        return dirichlet_eigenpairs(self.grid, self.q_ref, self.modes)

    def phi(self, k: int) -> Field:
        return self.basis.mode(k)[1]

    def eigenvalue(self, k: int) -> float:
        return self.basis.mode(k)[0]

    def field(self, text: Coefficient) -> Field:
        return parse_coefficient(text).on_grid(self.grid, self.phi)

    def edges(self, a1: Coefficient, a2: Coefficient) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.grid.axes
        return parse_coefficient(a1).on_edge(x), parse_coefficient(a2).on_edge(y)


TwinOutcome = tuple[RecoveryResult, dict[str, Field], float]


class Lab:
    """Twin experiments on the configured inversion and forward grids."""

    def __init__(self, config: ExperimentConfig, threads: int = 1):
        self.config = config
        self.threads = max(1, threads)
        self.coarse = config.grid.inversion_grid()
        self.fine = config.grid.forward_grid()
        self._contexts: dict[Grid, GridContext] = {}

    @property
    def tau(self) -> float:
        return self.config.time.tau

    def context(self, grid: Grid) -> GridContext:
        if grid not in self._contexts:
            self._contexts[grid] = GridContext(grid, self.config)
        return self._contexts[grid]

    def warm(self):
        """Compute both bases up front so worker threads only read them."""
        for grid in (self.coarse, self.fine):
            self.context(grid).basis

    def twin(self, kind: str) -> TwinSetup:
        return TwinSetup(
            kind, self.coarse, self.fine, self.tau, self.config.time_step(),
            label=self.config.experiment.label, threads=self.threads,
        )

    def recovery(self, noise: float):
        return replace(self.config.recovery, noise_level=noise)

    def source(self, pipeline: str, truth: Callable[[GridContext], Field], noise: float, seed: int) -> TwinOutcome:
        kind = "wave" if pipeline == "wave-source" else "heat"
        twin = self.twin(kind)
        kernel = parse_coefficient(self.config.coefficients.kernel)

        def build(grid: Grid, dt: float):
            return Kernel.from_function(kernel.in_time, self.tau, dt), truth(self.context(grid))

        fine = self.context(self.fine)
        trace = twin.source_trace(Coefficients(q=fine.q_ref), build, noise, seed)
        coarse = self.context(self.coarse)
        g = Kernel.from_function(kernel.in_time, self.tau, twin.coarse_dt)
        recover = recover_source_wave if kind == "wave" else recover_source_heat
        result = recover(coarse.q_ref, g, trace, coarse.basis, self.recovery(noise))
        return result, {"f": truth(coarse)}, trace.norm("H1")

    def _eigen_probes(self, complex_velocity: bool) -> Callable[[Grid], list[Probe]]:
        count = self.config.recovery.probe_count

        def build(grid: Grid) -> list[Probe]:
            ctx = self.context(grid)
            probes = []
            for k in range(1, count + 1):
                lam, phi = ctx.basis.mode(k)
                u1 = Field(grid, 1j * np.sqrt(lam) * phi.values) if complex_velocity else None
                probes.append(Probe(f"phi{k}", phi, u1, mode=k, eigenvalue=lam))
            return probes

        return build

    def heat_potential(self, dq: Callable[[GridContext], Field], noise: float, seed: int) -> TwinOutcome:
        fine = self.context(self.fine)
        data = self.twin("heat").differences(
            Coefficients(q=fine.q_ref + dq(fine)), Coefficients(q=fine.q_ref),
            self._eigen_probes(False), noise, seed,
        )
        coarse = self.context(self.coarse)
        result = recover_potential_heat(coarse.q_ref, data, coarse.basis, self.recovery(noise), self.threads)
        return result, {"dq": dq(coarse)}, data.distance("H1")

    def wave_potential(
        self,
        dq: Callable[[GridContext], Field],
        da: Callable[[GridContext], Field],
        noise: float,
        seed: int,
    ) -> TwinOutcome:
        fine = self.context(self.fine)
        data = self.twin("wave").differences(
            Coefficients(q=fine.q_ref + dq(fine), a=da(fine)), Coefficients(q=fine.q_ref),
            self._eigen_probes(True), noise, seed,
        )
        coarse = self.context(self.coarse)
        result = recover_potential_damping_wave(
            coarse.q_ref, data, coarse.basis, self.recovery(noise), self.threads
        )
        return result, {"dq": dq(coarse), "a": da(coarse)}, data.distance("H1")

    def boundary_damping(
        self,
        profiles: Callable[[GridContext], tuple[np.ndarray, np.ndarray]],
        noise: float,
        seed: int,
    ) -> TwinOutcome:
        modes = mixed_square_modes(self.config.recovery.probe_count)
        twin = self.twin("square")
        a1, a2 = profiles(self.context(self.fine))
        data = twin.differences(
            Coefficients(a1=a1, a2=a2), Coefficients(),
            lambda grid: square_probes(grid, modes), noise, seed,
        )
        result = recover_boundary_damping(
            data, self.recovery(noise), tau=self.tau, dt=twin.coarse_dt, threads=self.threads
        )
        t1, t2 = profiles(self.context(self.coarse))
        truth = {
            "a1": Field(Grid.interval(t1.size), t1),
            "a2": Field(Grid.interval(t2.size), t2),
        }
        return result, truth, data.distance("L2")


# ---------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------


def _complex_columns(name: str, values: np.ndarray) -> tuple[list[str], list[np.ndarray]]:
    if np.iscomplexobj(values):
        return [f"{name}_re", f"{name}_im"], [values.real, values.imag]
    return [name], [values]


def write_fields(out: OutputDirectory, fields: dict[str, Field]):
    grid = next(iter(fields.values())).grid
    coords = [c.reshape(-1) for c in grid.mesh()]
    # edge profiles are tabulated against arclength
    header = ["s"] if "a1" in fields else ["x", "y"][: grid.dimension]
    columns = list(coords)
    for name, f in fields.items():
        if f.grid != grid:
            raise DomainError(f"field {name} lives on a different grid")
        names, parts = _complex_columns(name, f.values.reshape(-1))
        header += names
        columns += parts
    out.csv("field.csv", header, zip(*columns))


def write_coefficients(out: OutputDirectory, coefficients: dict[str, np.ndarray]):
    header, columns = ["mode"], []
    for name, c in coefficients.items():
        names, parts = _complex_columns(name, np.asarray(c))
        header += names
        columns += parts
    length = max((p.size for p in columns), default=0)
    rows = []
    for i in range(length):
        rows.append([i + 1] + [p[i] if i < p.size else "" for p in columns])
    out.csv("coefficients.csv", header, rows)


def _inversion_report(out: OutputDirectory, outcome: TwinOutcome) -> dict:
    result, truth, distance = outcome
    write_fields(out, result.fields)
    write_coefficients(out, result.coefficients)
    errors = {name: relative_error(result.fields[name], t) for name, t in truth.items() if name in result.fields}
    results = {**result.results(), "relative_errors": errors, "distance": distance}
    certificates = {**result.certificates, "bound": result.bound}
    diagnostics = {**result.diagnostics, "operator_norms": OPERATOR_NORM_NOTE}
    return {"results": results, "certificates": certificates, "diagnostics": diagnostics}


def _require_pipeline(config: ExperimentConfig, allowed: tuple[str, ...]) -> str:
    pipeline = config.experiment.pipeline
    if pipeline not in allowed:
        raise _config_error("experiment.pipeline", f"must be one of {', '.join(allowed)} for this subcommand")
    return pipeline


# ---------------------------------------------------------------------
# Jobs
# ---------------------------------------------------------------------


def job_forward(lab: Lab, out: OutputDirectory) -> dict:
    config = lab.config
    kind = config.problem
    grid = lab.coarse
    ctx = lab.context(grid)
    co = config.coefficients
    tau = lab.tau
    dt = config.time_step()
    u0, u1, f = ctx.field(co.u0), ctx.field(co.u1), ctx.field(co.source)
    source = None
    if f.max_abs() > 0:
        kernel = Kernel.from_function(parse_coefficient(co.kernel).in_time, tau, dt or default_dt(grid))
        source = (kernel, grid.weights() * f.values if kind == "square" else f)

    if kind == "square":
        solution = solve_wave_boundary_damped(grid, ctx.edges(co.a1, co.a2), u0, u1, source, tau=tau, dt=dt)
    elif kind == "wave":
        solution = solve_wave(grid, ctx.q_ref, ctx.field(co.a), u0, u1, source, tau=tau, dt=dt)
    else:
        solution = solve_heat(grid, ctx.q_ref, u0, source, tau=tau, dt=dt)
    trace = neumann_trace(solution, config.experiment.label)

    names, _ = _complex_columns("value", trace.values)
    rows = []
    for n, t in enumerate(trace.times):
        for j, point in enumerate(trace.coords):
            v = trace.values[n, j]
            rows.append([t, *point, *((v.real, v.imag) if trace.is_complex else (v,))])
    out.csv("trace.csv", ["t", "x", "y"][: 1 + grid.dimension] + names, rows)

    results = {
        "problem": kind,
        "levels": solution.levels,
        "dt": solution.dt,
        "tau": solution.tau,
        "trace_l2": trace.norm("L2"),
        "trace_h1": trace.norm("H1"),
    }
    if kind == "heat":
        size = norm(solution.final(), "L2")
    else:
        size = math.sqrt(gradient_squared(u0) + norm(u1, "L2") ** 2)
        energy = wave_energy(solution)
        out.csv("energy.csv", ["step", "energy"], enumerate(energy))
        results["energy_drift"] = float(np.max(np.abs(energy - energy[0])))
    results["observability_ratio"] = trace.norm("L2") / size if size > 0 else math.inf
    return {"results": results, "certificates": {}, "diagnostics": {"label": trace.label}}


def job_deconvolve(lab: Lab, out: OutputDirectory) -> dict:
    v = lab.config.volterra
    tau = lab.tau
    kernel = Kernel.from_function(parse_coefficient(v.kernel).in_time, tau, v.dt)
    t = kernel.times
    truth = None
    if v.series is not None:
        y = parse_coefficient(v.series).in_time(t)
    else:
        truth = parse_coefficient(v.signal).in_time(t)
        y = convolve(kernel, truth)
    if v.noise > 0:
        y = np.array(y)
        y[1:] = add_noise(y[1:], v.noise, Xoshiro256StarStar(lab.config.seed))
    h = deconvolve(kernel, y, smoothing=v.smoothing)

    header, columns = ["t"], [t]
    for name, values in (("y", y), ("h", h)):
        names, parts = _complex_columns(name, values)
        header += names
        columns += parts
    out.csv("series.csv", header, zip(*columns))

    problem = ConvolutionProblem(kernel, y)
    results = {
        "levels": t.size,
        "gronwall_holds": problem.gronwall_holds(h),
        "amplification": amplification_constant(kernel, tau, 1.0),
        "derivative_energy": derivative_energy(kernel, tau),
    }
    if truth is not None:
        results["relative_error"] = time_norm(h - truth, v.dt) / max(time_norm(truth, v.dt), 1e-300)
    return {"results": results, "certificates": {}, "diagnostics": {"smoothing": v.smoothing}}


def job_invert_source(lab: Lab, out: OutputDirectory) -> dict:
    config = lab.config
    pipeline = _require_pipeline(config, ("wave-source", "heat-source"))
    text = config.coefficients.source
    outcome = lab.source(pipeline, lambda ctx: ctx.field(text), config.recovery.noise_level, config.seed)
    return _inversion_report(out, outcome)


def job_invert_potential(lab: Lab, out: OutputDirectory) -> dict:
    config = lab.config
    co = config.coefficients
    pipeline = _require_pipeline(config, ("heat-potential", "wave-potential"))
    truth_q = co.q_true or co.q

    def dq(ctx: GridContext) -> Field:
        return ctx.field(truth_q) - ctx.q_ref

    noise, seed = config.recovery.noise_level, config.seed
    if pipeline == "heat-potential":
        outcome = lab.heat_potential(dq, noise, seed)
    else:
        truth_a = co.a_true or "0"
        outcome = lab.wave_potential(dq, lambda ctx: ctx.field(truth_a), noise, seed)
    return _inversion_report(out, outcome)


def job_invert_damping(lab: Lab, out: OutputDirectory) -> dict:
    config = lab.config
    _require_pipeline(config, ("boundary-damping",))
    co = config.coefficients
    outcome = lab.boundary_damping(
        lambda ctx: ctx.edges(co.a1, co.a2), config.recovery.noise_level, config.seed
    )
    return _inversion_report(out, outcome)


def job_verify_inequalities(lab: Lab, out: OutputDirectory) -> dict:
    s = lab.config.inequalities
    grid = lab.coarse
    ctx = lab.context(grid)
    fields = {text: ctx.field(text) for group in (s.hardy, s.hopf, s.interpolation, s.negative_power, s.weighted_l2)
              for text in group}
    weight = ctx.field(s.weight)

    checks = []
    checks += [lambda t=t: hardy_report(fields[t], t) for t in s.hardy]
    checks += [lambda t=t: hopf_report(fields[t], t) for t in s.hopf]
    checks += [lambda t=t: interpolation_report(fields[t], weight, t) for t in s.interpolation]
    if grid.dimension == 1:
        checks += [lambda t=t: negative_power_report(fields[t], s.deltas, t) for t in s.negative_power]
    elif s.negative_power:
        log.warning("negative-power exponents are searched on the interval; %d sample(s) skipped",
                    len(s.negative_power))
    checks += [lambda t=t: weighted_l2_bound_check(fields[t], weight, s.weighted_delta) for t in s.weighted_l2]

    reports = evaluate_suite(checks, threads=lab.threads)
    out.csv("ledger.csv", ["id", "constant", "resolution", "pass"], [list(r.row().values()) for r in reports])
    rows = [{**r.row(), "sample": r.sample, "detail": r.detail} for r in reports]
    failed = [r.inequality_id for r in reports if r.passed is False]
    return {"results": {"rows": rows, "failed": failed}, "certificates": {}, "diagnostics": {"h": grid.h}}


def job_stability_sweep(lab: Lab, out: OutputDirectory) -> dict:
    config = lab.config
    s = config.sweep
    pipeline = s.pipeline or config.experiment.pipeline
    if pipeline not in PIPELINE_IDS:
        raise _config_error("sweep.pipeline", "a pipeline is required for a stability sweep")
    if s.family not in SWEEP_FAMILIES[pipeline]:
        raise _config_error(
            "sweep.family", f"{pipeline} sweeps use family {' or '.join(SWEEP_FAMILIES[pipeline])}"
        )
    if pipeline != "boundary-damping":
        lab.warm()
    records = run_sweep(
        pipeline, s.family, s.amplitudes, noise=s.noise, seeds=s.seeds, threads=lab.threads, context=lab
    )
    out.csv("sweep.csv", ["amplitude", "distance", "error", "seed"], [list(r.row().values()) for r in records])

    try:
        fit = asdict(rate_fit(records, s.fit))
    except DomainError as exc:
        log.warning("rate fit skipped: %s", exc)
        fit = {"model": s.fit, "skipped": str(exc)}
    modulus = designated_modulus(pipeline, config.grid.dimension, config.recovery.delta)
    certification = certify(records, modulus)
    failures = [{"amplitude": r.amplitude, "seed": r.seed, "failure": r.failure} for r in records if not r.ok]
    return {
        "results": {"pipeline": pipeline, "family": s.family, "rows": len(records), "failures": failures},
        "certificates": {"certification": certification.as_dict(), "rate_fit": fit},
        "diagnostics": {"distance": OPERATOR_NORM_NOTE},
    }


def job_certify(lab: Lab, out: OutputDirectory) -> dict:
    config = lab.config
    c = config.certify
    path = Path(c.input)
    if not path.is_absolute():
        path = config.base_dir / path
    try:
        rows = read_csv(path)
    except OSError as exc:
        raise _config_error("certify.input", f"cannot read {path}: {exc}") from None
    records = []
    for row in rows:
        try:
            amplitude, distance, error = (float(row[k]) for k in ("amplitude", "distance", "error"))
            seed = int(row["seed"])
        except (KeyError, ValueError) as exc:
            raise _config_error("certify.input", f"{path} is not a sweep table ({exc})") from None
        ok = math.isfinite(distance) and math.isfinite(error)
        records.append(SweepRecord(amplitude, distance, error, seed, "" if ok else "failed row"))

    if c.modulus:
        modulus = StabilityModulus(c.modulus, c.parameter)
    else:
        pipeline = c.pipeline or config.experiment.pipeline
        if not pipeline:
            raise _config_error("certify.modulus", "give a modulus and parameter, or a pipeline")
        modulus = designated_modulus(pipeline, config.grid.dimension, config.recovery.delta)
    certification = certify(records, modulus)
    out.json("certification.json", certification.as_dict())
    return {
        "results": {"input": str(path), "rows": len(records)},
        "certificates": {"certification": certification.as_dict()},
        "diagnostics": {},
    }


JOBS: dict[str, Callable[[Lab, OutputDirectory], dict]] = {
    "forward": job_forward,
    "deconvolve": job_deconvolve,
    "invert-source": job_invert_source,
    "invert-potential": job_invert_potential,
    "invert-damping": job_invert_damping,
    "verify-inequalities": job_verify_inequalities,
    "stability-sweep": job_stability_sweep,
    "certify": job_certify,
}


def config_echo(config: ExperimentConfig) -> dict:
    return {name: asdict(getattr(config, name)) for name in SECTIONS}


def run_job(command: str, config: ExperimentConfig, out_dir: Path, threads: int = 1) -> dict:
    """Run one subcommand into ``out_dir``; partial outputs are removed on failure."""
    if command not in JOBS:
        raise DomainError(f"unknown subcommand '{command}'")
    manifest = RunManifest(config_hash(config.source_text or serialize(config)))
    with OutputDirectory(out_dir, manifest) as out:
        lab = Lab(config, threads)
        with manifest.stage(command):
            body = JOBS[command](lab, out)
        log.info("%s finished in %.3f s", command, manifest.timings[command])
        return out.finish({"config": config_echo(config), **body})


# ---------------------------------------------------------------------
# Stability sweep rows
# ---------------------------------------------------------------------


def _bump(ctx: GridContext) -> Field:
    return Field.from_function(ctx.grid, lambda *c: np.prod([np.sin(np.pi * v) ** 2 for v in c], axis=0))


def _parabola(ctx: GridContext) -> Field:
    return Field.from_function(ctx.grid, lambda *c: np.prod([v * (1.0 - v) for v in c], axis=0))


def _zero(ctx: GridContext) -> Field:
    return Field.zeros(ctx.grid)


@register_pipeline("heat-potential")
def heat_potential_row(lab: Lab, amplitude: float, family: str, noise: float, seed: int):
    shape = _bump if family == "bump" else (lambda ctx: ctx.phi(1))
    result, truth, distance = lab.heat_potential(lambda ctx: shape(ctx) * amplitude, noise, seed)
    return distance, norm(result.fields["dq"] - truth["dq"], "L2")


@register_pipeline("wave-potential")
def wave_potential_row(lab: Lab, amplitude: float, family: str, noise: float, seed: int):
    if family == "damping":
        result, truth, distance = lab.wave_potential(_zero, lambda ctx: _parabola(ctx) * amplitude, noise, seed)
        return distance, norm(result.fields["a"] - truth["a"], "L2")
    result, truth, distance = lab.wave_potential(lambda ctx: ctx.phi(1) * amplitude, _zero, noise, seed)
    return distance, norm(result.fields["dq"] - truth["dq"], "L2")


@register_pipeline("boundary-damping")
def boundary_damping_row(lab: Lab, amplitude: float, family: str, noise: float, seed: int):
    def constant(ctx):
        x, y = ctx.grid.axes
        return np.full(x.size, amplitude), np.full(y.size, amplitude)

    result, truth, distance = lab.boundary_damping(constant, noise, seed)
    error = math.hypot(*(norm(result.fields[k] - truth[k], "L2") for k in ("a1", "a2")))
    return distance, error


def _source_row(pipeline: str):
    def row(lab: Lab, amplitude: float, family: str, noise: float, seed: int):
        result, truth, distance = lab.source(pipeline, lambda ctx: ctx.phi(1) * amplitude, noise, seed)
        return distance, norm(result.fields["f"] - truth["f"], "L2")

    return register_pipeline(pipeline)(row)


wave_source_row = _source_row("wave-source")
heat_source_row = _source_row("heat-source")
