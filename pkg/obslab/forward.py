"""Forward solvers for the damped wave, the heat equation and the boundary-damped
wave on the square, Neumann traces, initial-to-boundary maps and empirical
observability constants.

Time stepping runs on the free nodes in the symmetric form
M u'' + C u' + K_q u = M F. Waves use leapfrog with the damping term averaged
over u^{n+1} and u^{n-1}; heat uses Crank–Nicolson.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from obslab.errors import (
    CFLViolation,
    DomainError,
    InstabilityError,
    NumericalError,
    ProbeFailure,
)
from obslab.grid import BoundaryTrace, Field, Grid, Kernel, time_levels
from obslab.norms import gradient_squared, norm
from obslab.operators import DiscreteOperator, assemble, boundary_damping, trace_operator

log = logging.getLogger(__name__)

PROBLEM_KINDS = ("wave", "heat", "square")

# dt as a fraction of h
DEFAULT_COURANT = {1: 0.8, 2: 0.4}


def default_dt(grid: Grid) -> float:
    return DEFAULT_COURANT[grid.dimension] * min(grid.spacing)


def check_cfl(grid: Grid, dt: float):
    limit = min(grid.spacing) / np.sqrt(grid.dimension)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise CFLViolation(f"dt = {dt:.6g} violates the CFL bound {limit:.6g}")


# ---------------------------------------------------------------------
# Solutions and coefficients
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpaceTimeSolution:
    """Snapshots u[n] (and ∂_t u for waves) at t = n·dt, n = 0..⌊τ/dt⌋."""

    grid: Grid
    dt: float
    u: np.ndarray
    ut: np.ndarray | None
    operator: DiscreteOperator
    potential: Field | None = None

    @property
    def levels(self) -> int:
        return self.u.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.levels)

    @property
    def tau(self) -> float:
        return self.dt * (self.levels - 1)

    def snapshot(self, n: int) -> Field:
        return Field(self.grid, self.u[n])

    def final(self) -> Field:
        return self.snapshot(self.levels - 1)

    def __add__(self, other: "SpaceTimeSolution") -> "SpaceTimeSolution":
        ut = None if self.ut is None or other.ut is None else self.ut + other.ut
        return SpaceTimeSolution(
            self.grid, self.dt, self.u + other.u, ut, self.operator, self.potential
        )


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Potential q and interior damping a (wave, heat); edge profiles a1, a2 (square)."""

    q: Field | None = None
    a: Field | None = None
    a1: np.ndarray | None = None
    a2: np.ndarray | None = None


def _validate_edge_damping(a1, a2):
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    if np.any(a1 < 0) or np.any(a2 < 0):
        raise DomainError("boundary damping must be nonnegative")
    if not np.isclose(a1[0], a2[0], rtol=1e-12, atol=1e-14):
        raise DomainError(f"edge profiles must agree at the corner ({a1[0]} != {a2[0]})")
    return a1, a2


def _wave_system(kind: str, grid: Grid, coefficients: Coefficients):
    """(operator, K_q, C/M) for a wave problem."""
    if kind == "square":
        if grid.dimension != 2:
            raise DomainError("boundary damping lives on the unit square")
        op = assemble(grid, "mixed")
        nx, ny = grid.nodes
        a1 = coefficients.a1 if coefficients.a1 is not None else np.zeros(nx)
        a2 = coefficients.a2 if coefficients.a2 is not None else np.zeros(ny)
        a1, a2 = _validate_edge_damping(a1, a2)
        ratio = boundary_damping(op, a1, a2) / op.mass
        return op, op.stiffness, ratio
    op = assemble(grid, "dirichlet")
    ratio = op.gather(coefficients.a) if coefficients.a is not None else np.zeros(op.size)
    return op, op.with_potential(coefficients.q), ratio


def _free_values(op: DiscreteOperator, f: Field | None, what: str) -> np.ndarray:
    if f is None:
        return np.zeros(op.size)
    if f.grid != op.grid:
        raise DomainError(f"{what} lives on a different grid")
    outside = np.ones(op.grid.size, dtype=bool)
    outside[op.free] = False
    stray = np.max(np.abs(f.values.reshape(-1)[outside]), initial=0.0)
    if stray > 1e-8 * max(1.0, f.max_abs()):
        raise DomainError(f"{what} is not zero on the Dirichlet boundary ({stray:.3e})")
    return op.gather(f)


def _source_samples(source, levels: int):
    if source is None:
        return None, None
    kernel, f = source
    if kernel.samples.size < levels:
        raise DomainError(
            f"source kernel has {kernel.samples.size} samples, run needs {levels}"
        )
    return kernel.samples[:levels], f


def _parts(*arrays) -> list[Callable]:
    if any(a is not None and np.iscomplexobj(a) for a in arrays):
        return [np.real, np.imag]
    return [np.real]


# ---------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------


def _leapfrog(
    stiffness: sparse.csr_matrix,
    mass: np.ndarray,
    ratio: np.ndarray,
    u0: np.ndarray,
    u1: np.ndarray,
    forcing: Callable[[int], np.ndarray] | None,
    dt: float,
    levels: int,
) -> Iterator[np.ndarray]:
    def accel(u, n):
        a = -(stiffness @ u) / mass
        if forcing is not None:
            a = a + forcing(n)
        return a

    prev = np.array(u0, dtype=float)
    yield prev
    if levels == 1:
        return
    cur = prev + dt * u1 + 0.5 * dt**2 * (accel(prev, 0) - ratio * u1)
    yield cur
    plus = 1.0 + 0.5 * dt * ratio
    minus = 1.0 - 0.5 * dt * ratio
    for n in range(1, levels - 1):
        nxt = (2.0 * cur - minus * prev + dt**2 * accel(cur, n)) / plus
        if not np.all(np.isfinite(nxt)):
            raise InstabilityError("wave state became non-finite", n + 1)
        prev, cur = cur, nxt
        yield cur


def _crank_nicolson(
    stiffness: sparse.csr_matrix,
    mass: np.ndarray,
    u0: np.ndarray,
    forcing: Callable[[int], np.ndarray] | None,
    dt: float,
    levels: int,
) -> Iterator[np.ndarray]:
    m = sparse.diags(mass)
    try:
        lhs = splu((m + 0.5 * dt * stiffness).tocsc())
    except RuntimeError as exc:
        raise NumericalError(f"Crank-Nicolson factorization failed: {exc}") from exc
    rhs_matrix = (m - 0.5 * dt * stiffness).tocsr()
    cur = np.array(u0, dtype=float)
    yield cur
    for n in range(levels - 1):
        rhs = rhs_matrix @ cur
        if forcing is not None:
            rhs = rhs + 0.5 * dt * mass * (forcing(n) + forcing(n + 1))
        cur = lhs.solve(rhs)
        if not np.all(np.isfinite(cur)):
            raise InstabilityError("heat state became non-finite", n + 1)
        yield cur


def _forcing(g: np.ndarray | None, vector: np.ndarray | None, part: Callable):
    if g is None:
        return None
    return lambda n: part(g[n] * vector)


def _collect(steps: Iterator[np.ndarray], observe: sparse.csr_matrix | None = None):
    rows, last = [], None
    for v in steps:
        rows.append(v if observe is None else observe @ v)
        last = v
    return np.array(rows), last


def _time_derivative(u: np.ndarray, u1: np.ndarray, dt: float) -> np.ndarray:
    ut = np.empty_like(u)
    ut[0] = u1
    if u.shape[0] > 2:
        ut[1:-1] = (u[2:] - u[:-2]) / (2.0 * dt)
        ut[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dt)
    elif u.shape[0] == 2:
        ut[1] = (u[1] - u[0]) / dt
    return ut


def _wave_history(op, stiffness, ratio, u0v, u1v, g, fv, dt, levels, observe=None):
    """Run real and imaginary parts separately and recombine."""
    results = []
    for part in _parts(u0v, u1v, g, fv):
        steps = _leapfrog(
            stiffness, op.mass, ratio, part(u0v), part(u1v), _forcing(g, fv, part), dt, levels
        )
        results.append(_collect(steps, observe))
    if len(results) == 1:
        return results[0]
    (rr, lr), (ri, li) = results
    return rr + 1j * ri, lr + 1j * li


def _heat_history(op, stiffness, u0v, g, fv, dt, levels, observe=None):
    results = []
    for part in _parts(u0v, g, fv):
        steps = _crank_nicolson(stiffness, op.mass, part(u0v), _forcing(g, fv, part), dt, levels)
        results.append(_collect(steps, observe))
    if len(results) == 1:
        return results[0]
    (rr, lr), (ri, li) = results
    return rr + 1j * ri, lr + 1j * li


def _full(op: DiscreteOperator, rows: np.ndarray) -> np.ndarray:
    out = np.zeros((rows.shape[0], op.grid.size), dtype=rows.dtype)
    out[:, op.free] = rows
    return out.reshape((rows.shape[0],) + op.grid.shape)


# ---------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------


def solve_wave(
    grid: Grid,
    q: Field | None,
    a: Field | None,
    u0: Field,
    u1: Field | None = None,
    source: tuple[Kernel, Field] | None = None,
    *,
    tau: float,
    dt: float | None = None,
) -> SpaceTimeSolution:
    """u_tt − Δu + q u + a u_t = g(t) f(x) with Dirichlet data, by leapfrog."""
    dt = default_dt(grid) if dt is None else dt
    check_cfl(grid, dt)
    levels = time_levels(tau, dt)
    op, stiffness, ratio = _wave_system("wave", grid, Coefficients(q=q, a=a))
    u0v = _free_values(op, u0, "u0")
    u1v = _free_values(op, u1, "u1")
    g, f = _source_samples(source, levels)
    fv = None if f is None else _free_values(op, f, "source")
    rows, _ = _wave_history(op, stiffness, ratio, u0v, u1v, g, fv, dt, levels)
    u = _full(op, rows)
    ut = _full(op, _time_derivative(rows, u1v, dt))
    log.debug("wave solve: %d levels, dt = %.4g", levels, dt)
    return SpaceTimeSolution(grid, dt, u, ut, op, q)


def solve_heat(
    grid: Grid,
    q: Field | None,
    u0: Field | None = None,
    source: tuple[Kernel, Field] | None = None,
    *,
    tau: float,
    dt: float,
) -> SpaceTimeSolution:
    """u_t − Δu + q u = g(t) f(x) with Dirichlet data, by Crank–Nicolson."""
    if u0 is None and source is None:
        raise DomainError("heat solve needs initial data or a source")
    levels = time_levels(tau, dt)
    op = assemble(grid, "dirichlet")
    u0v = _free_values(op, u0, "u0")
    g, f = _source_samples(source, levels)
    fv = None if f is None else _free_values(op, f, "source")
    rows, _ = _heat_history(op, op.with_potential(q), u0v, g, fv, dt, levels)
    return SpaceTimeSolution(grid, dt, _full(op, rows), None, op, q)


def solve_wave_boundary_damped(
    grid: Grid,
    a: tuple[np.ndarray, np.ndarray],
    u0: Field,
    u1: Field | None = None,
    source: tuple[Kernel, np.ndarray] | None = None,
    *,
    tau: float,
    dt: float | None = None,
) -> SpaceTimeSolution:
    """u_tt − Δu = 0 on the square, Dirichlet on Γ₀, ∂_ν u + a ∂_t u = 0 on Γ₁.

    ``a`` holds the bottom-edge profile a1(x) and the left-edge profile a2(y)
    at the grid nodes. A source is a kernel and a nodal load vector b (full
    grid shape), entering as M F = g(t) b.
    """
    dt = default_dt(grid) if dt is None else dt
    check_cfl(grid, dt)
    levels = time_levels(tau, dt)
    a1, a2 = a
    op, stiffness, ratio = _wave_system("square", grid, Coefficients(a1=a1, a2=a2))
    u0v = _free_values(op, u0, "u0")
    u1v = _free_values(op, u1, "u1")
    g, load = _source_samples(source, levels)
    fv = None if load is None else op.gather(load) / op.mass
    rows, _ = _wave_history(op, stiffness, ratio, u0v, u1v, g, fv, dt, levels)
    u = _full(op, rows)
    ut = _full(op, _time_derivative(rows, u1v, dt))
    return SpaceTimeSolution(grid, dt, u, ut, op)


def neumann_trace(solution: SpaceTimeSolution, label: str) -> BoundaryTrace:
    """Outward normal derivative on ``label`` at every time level."""
    tr = trace_operator(solution.grid, label)
    return BoundaryTrace(label, solution.dt, tr(solution.u), tr.weights, tr.coords)


def wave_energy(solution: SpaceTimeSolution) -> np.ndarray:
    """Staggered energy E^{n+½} = ½‖(u^{n+1}−u^n)/dt‖²_M + ½(u^{n+1})ᵀK_q u^n.

    Leapfrog conserves it exactly without damping and decreases it with
    nonnegative damping.
    """
    if solution.ut is None:
        raise DomainError("energy is defined for wave solutions")
    op = solution.operator
    stiffness = op.with_potential(solution.potential) if op.boundary == "dirichlet" else op.stiffness
    flat = solution.u.reshape(solution.levels, -1)[:, op.free]
    diff = (flat[1:] - flat[:-1]) / solution.dt
    kinetic = 0.5 * np.real(np.sum(op.mass * np.abs(diff) ** 2, axis=1))
    potential = 0.5 * np.real(np.sum(np.conj(flat[1:]) * (stiffness @ flat[:-1].T).T, axis=1))
    return kinetic + potential


# ---------------------------------------------------------------------
# Initial-to-boundary maps
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Probe:
    """Initial data (u0, u1) and an optional separable source g(t)f(x).

    Eigenfunction probes also carry their mode index and eigenvalue.
    """

    probe_id: str
    u0: Field
    u1: Field | None = None
    source: tuple[Kernel, Field] | None = None
    mode: int | tuple[int, int] | None = None
    eigenvalue: float | None = None

    def norm(self, kind: str) -> float:
        """Energy norm (‖∇u0‖² + ‖u1‖²)^{1/2} for waves, ‖u0‖ for heat."""
        if kind == "heat":
            value = norm(self.u0, "L2")
        else:
            u1 = norm(self.u1, "L2") if self.u1 is not None else 0.0
            value = float(np.sqrt(gradient_squared(self.u0) + u1**2))
        if value == 0.0 and self.source is not None:
            value = norm(self.source[1], "L2")
        return value


@dataclass(frozen=True, eq=False)
class ProbeResponse:
    probe: Probe
    trace: BoundaryTrace
    final: Field


@dataclass(frozen=True, eq=False)
class ProbeResponseSet:
    """Traces of one forward map on a probe dictionary, ordered by probe index."""

    kind: str
    label: str
    dt: float
    tau: float
    responses: tuple[ProbeResponse, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.responses)

    def __iter__(self):
        return iter(self.responses)

    def __getitem__(self, i) -> ProbeResponse:
        return self.responses[i]

    @property
    def probe_ids(self) -> list[str]:
        return [r.probe.probe_id for r in self.responses]

    @property
    def traces(self) -> list[BoundaryTrace]:
        return [r.trace for r in self.responses]

    def difference(self, reference: "ProbeResponseSet") -> "ProbeResponseSet":
        """Trace-wise self − reference on the same probe dictionary."""
        if self.probe_ids != reference.probe_ids:
            raise DomainError("response sets were measured on different probes")
        responses = tuple(
            ProbeResponse(r.probe, r.trace - s.trace, r.final - s.final)
            for r, s in zip(self.responses, reference.responses)
        )
        return ProbeResponseSet(self.kind, self.label, self.dt, self.tau, responses)

    def with_traces(self, traces: list[BoundaryTrace]) -> "ProbeResponseSet":
        responses = tuple(
            ProbeResponse(r.probe, t, r.final) for r, t in zip(self.responses, traces)
        )
        return ProbeResponseSet(self.kind, self.label, self.dt, self.tau, responses)

    def distance(self, kind: str = "L2") -> float:
        """sup over probes of ‖trace‖/‖probe‖, traces in L² or H¹ over Γ×(0,τ); a
        dictionary under-estimate of the operator norm."""
        ratios = []
        for r in self.responses:
            size = r.probe.norm(self.kind)
            if size == 0.0:
                raise DomainError(f"probe {r.probe.probe_id} has zero norm")
            ratios.append(r.trace.norm(kind) / size)
        return max(ratios, default=0.0)


def probe_response(
    kind: str,
    grid: Grid,
    coefficients: Coefficients,
    probe: Probe,
    *,
    tau: float,
    dt: float | None,
    label: str,
) -> ProbeResponse:
    """One forward solve recording only the trace and the final state."""
    if kind not in PROBLEM_KINDS:
        raise DomainError(f"unknown problem kind '{kind}' (expected one of {', '.join(PROBLEM_KINDS)})")
    tr = trace_operator(grid, label)
    if kind == "heat":
        if dt is None:
            raise DomainError("heat runs need an explicit dt")
        levels = time_levels(tau, dt)
        op = assemble(grid, "dirichlet")
        observe = tr.matrix[:, op.free]
        g, f = _source_samples(probe.source, levels)
        fv = None if f is None else _free_values(op, f, "source")
        values, last = _heat_history(
            op, op.with_potential(coefficients.q), _free_values(op, probe.u0, "u0"),
            g, fv, dt, levels, observe,
        )
    else:
        dt = default_dt(grid) if dt is None else dt
        check_cfl(grid, dt)
        levels = time_levels(tau, dt)
        op, stiffness, ratio = _wave_system(kind, grid, coefficients)
        observe = tr.matrix[:, op.free]
        g, f = _source_samples(probe.source, levels)
        if f is None:
            fv = None
        elif kind == "square":
            fv = op.gather(f.values if isinstance(f, Field) else f) / op.mass
        else:
            fv = _free_values(op, f, "source")
        values, last = _wave_history(
            op, stiffness, ratio,
            _free_values(op, probe.u0, "u0"), _free_values(op, probe.u1, "u1"),
            g, fv, dt, levels, observe,
        )
    trace = BoundaryTrace(label, dt, values, tr.weights, tr.coords)
    return ProbeResponse(probe, trace, Field(grid, op.scatter(last)))


def initial_to_boundary(
    kind: str,
    grid: Grid,
    coefficients: Coefficients,
    probes: list[Probe],
    *,
    tau: float,
    dt: float | None = None,
    label: str = "boundary",
    threads: int = 1,
) -> ProbeResponseSet:
    """Sample Λ(q,a), N(q) or Λ(a) on a probe dictionary.

    Probe solves run concurrently on ``threads`` workers; results keep the
    dictionary order.
    """
    grid.edges(label)

    def run(probe: Probe) -> ProbeResponse:
        try:
            return probe_response(kind, grid, coefficients, probe, tau=tau, dt=dt, label=label)
        except (NumericalError, DomainError) as exc:
            raise ProbeFailure(probe.probe_id, exc) from exc

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        responses = tuple(pool.map(run, probes))
    step = responses[0].trace.dt if responses else (dt or default_dt(grid))
    log.info("%s map: %d probe(s) on %s, tau = %g", kind, len(responses), label, tau)
    return ProbeResponseSet(kind, label, step, tau, responses)


def estimate_observability_constant(
    kind: str,
    grid: Grid,
    coefficients: Coefficients,
    probes: list[Probe],
    *,
    tau: float,
    dt: float | None = None,
    label: str = "boundary",
    threads: int = 1,
) -> float:
    """Empirical lower estimate of κ: the minimum over the dictionary of
    ‖∂_ν u‖/‖(u0,u1)‖ (waves) or ‖∂_ν u‖/‖u(·,τ)‖ (heat)."""
    if not probes:
        raise DomainError("observability estimate needs a nonempty probe dictionary")
    responses = initial_to_boundary(
        kind, grid, coefficients, probes, tau=tau, dt=dt, label=label, threads=threads
    )
    ratios = []
    for r in responses:
        size = norm(r.final, "L2") if kind == "heat" else r.probe.norm(kind)
        if size == 0.0:
            raise DomainError(f"probe {r.probe.probe_id} is degenerate (zero norm)")
        ratios.append(r.trace.norm("L2") / size)
    kappa = min(ratios)
    log.info("observability estimate over %d probe(s): %.6g", len(ratios), kappa)
    return float(kappa)
