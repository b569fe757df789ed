"""Twin experiments: measurements synthesized on a finer forward grid,
restricted to the inversion grid, with seeded noise."""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from obslab.errors import ConfigError, DomainError, Violation
from obslab.forward import (
    Coefficients,
    Probe,
    ProbeResponse,
    ProbeResponseSet,
    default_dt,
    initial_to_boundary,
    probe_response,
)
from obslab.grid import BoundaryTrace, Field, Grid, Kernel, restrict
from obslab.noise import Xoshiro256StarStar, add_noise
from obslab.operators import trace_operator

log = logging.getLogger(__name__)

ProbeBuilder = Callable[[Grid], list[Probe]]
SourceBuilder = Callable[[Grid, float], tuple[Kernel, Field]]


def check_refinement(coarse: Grid, fine: Grid) -> int:
    """The ratio r with fine = coarse refined r times; r ≥ 2 is required."""
    ratio = coarse.refinement_ratio(fine)
    if ratio < 2:
        raise ConfigError([
            Violation(None, "grid.forward_nodes",
                      f"forward grid {fine.nodes} must refine {coarse.nodes} by an integer factor ≥ 2 "
                      "(inverse-crime guard)")
        ])
    return ratio


def _node_index(coarse: np.ndarray, fine: np.ndarray) -> np.ndarray:
    index = []
    for point in coarse:
        hits = np.flatnonzero(np.all(np.isclose(fine, point, atol=1e-12), axis=1))
        if hits.size != 1:
            raise DomainError(f"boundary node {point} has no counterpart on the forward grid")
        index.append(hits[0])
    return np.array(index, dtype=int)


def _noisy(trace: BoundaryTrace, sigma: float, rng: Xoshiro256StarStar) -> BoundaryTrace:
    # t = 0 is measured exactly: every run starts from the same state
    values = trace.values.copy()
    values[1:] = add_noise(values[1:], sigma, rng)
    return trace.with_values(values)


@dataclass(frozen=True)
class TwinSetup:
    """Inversion grid, forward grid and the time step shared by a twin run.

    ``dt`` is the inversion step; waves are forwarded at dt/r so the CFL
    ratio is unchanged, heat at dt.
    """

    kind: str
    coarse: Grid
    fine: Grid
    tau: float
    dt: float | None = None
    label: str = "boundary"
    threads: int = 1

    def __post_init__(self):
        check_refinement(self.coarse, self.fine)
        if self.kind == "heat" and self.dt is None:
            raise DomainError("heat twins need an explicit dt")

    @property
    def ratio(self) -> int:
        return self.coarse.refinement_ratio(self.fine)

    @property
    def coarse_dt(self) -> float:
        return default_dt(self.coarse) if self.dt is None else self.dt

    @property
    def fine_dt(self) -> float:
        return self.coarse_dt if self.kind == "heat" else self.coarse_dt / self.ratio

    @property
    def stride(self) -> int:
        return 1 if self.kind == "heat" else self.ratio

    def restrict_trace(self, trace: BoundaryTrace) -> BoundaryTrace:
        """Keep the coarse boundary nodes and every stride-th time level."""
        coarse_tr = trace_operator(self.coarse, trace.label)
        columns = _node_index(coarse_tr.coords, trace.coords)
        levels = int(np.floor(self.tau / self.coarse_dt + 1e-9)) + 1
        values = trace.values[:: self.stride][:levels, columns]
        if values.shape[0] != levels:
            raise DomainError(f"forward trace has {values.shape[0]} levels, {levels} needed")
        return BoundaryTrace(trace.label, self.coarse_dt, values, coarse_tr.weights, coarse_tr.coords)

    def _responses(self, coefficients: Coefficients, probes: list[Probe]) -> ProbeResponseSet:
        return initial_to_boundary(
            self.kind, self.fine, coefficients, probes,
            tau=self.tau, dt=self.fine_dt, label=self.label, threads=self.threads,
        )

    def differences(
        self,
        truth: Coefficients,
        reference: Coefficients,
        probes: ProbeBuilder,
        noise: float = 0.0,
        seed: int = 0,
    ) -> ProbeResponseSet:
        """Λ(truth) − Λ(reference) measured on the inversion grid.

        Forward probes come from ``probes(fine)``; the returned set carries
        ``probes(coarse)`` so distances use inversion-grid norms.
        """
        fine_probes = probes(self.fine)
        coarse_probes = probes(self.coarse)
        if [p.probe_id for p in fine_probes] != [p.probe_id for p in coarse_probes]:
            raise DomainError("probe builder returned different dictionaries on the two grids")
        delta = self._responses(truth, fine_probes).difference(self._responses(reference, fine_probes))
        rng = Xoshiro256StarStar(seed)
        responses = []
        for r, probe in zip(delta, coarse_probes):
            trace = self.restrict_trace(r.trace)
            trace = _noisy(trace, noise, rng)
            responses.append(ProbeResponse(probe, trace, restrict(r.final, self.coarse)))
        log.info("twin: %d probe(s), forward grid %s, noise %g, seed %d",
                 len(responses), self.fine.nodes, noise, seed)
        return ProbeResponseSet(self.kind, self.label, self.coarse_dt, self.tau, tuple(responses))

    def source_trace(
        self,
        coefficients: Coefficients,
        source: SourceBuilder,
        noise: float = 0.0,
        seed: int = 0,
    ) -> BoundaryTrace:
        """Trace of the zero-data solution driven by ``source(fine, fine_dt)``."""
        probe = Probe("source", Field.zeros(self.fine), source=source(self.fine, self.fine_dt))
        response = probe_response(
            self.kind, self.fine, coefficients, probe,
            tau=self.tau, dt=self.fine_dt, label=self.label,
        )
        trace = self.restrict_trace(response.trace)
        return _noisy(trace, noise, Xoshiro256StarStar(seed))
