"""Unit tests for the forward solvers and initial-to-boundary maps"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from obslab.errors import CFLViolation, DomainError, ProbeFailure
from obslab.forward import (
    Coefficients,
    Probe,
    default_dt,
    estimate_observability_constant,
    initial_to_boundary,
    neumann_trace,
    probe_response,
    solve_heat,
    solve_wave,
    solve_wave_boundary_damped,
    wave_energy,
)
from obslab.grid import Field, Grid, Kernel
from obslab.norms import norm
from obslab.operators import trace_operator
from obslab.spectral import dirichlet_eigenpairs, mixed_square_eigenpairs
from obslab.stability import SweepRecord, rate_fit
from obslab.volterra import convolve


def sine(grid):
    return Field.from_function(grid, lambda x: math.sqrt(2) * np.sin(np.pi * x))


def constant(grid, value):
    return Field.from_function(grid, lambda *c: value + 0 * c[0])


class TestSolveWave:
    """Tests for the leapfrog wave solver"""

    @pytest.mark.unit
    def test_standing_mode(self):
        """Test that cos(pi t) sqrt(2) sin(pi x) is reproduced to 1e-3"""
        grid = Grid.interval(401)
        u0 = sine(grid)

        sol = solve_wave(grid, None, None, u0, tau=2.0)

        for n in (sol.levels // 2, sol.levels - 1):
            exact = math.cos(math.pi * sol.times[n]) * u0.values
            assert norm(Field(grid, sol.u[n] - exact), "L2") <= 1e-3

    @pytest.mark.unit
    def test_undamped_energy_is_conserved(self):
        """Test that the staggered energy drifts less than 1e-4 over tau = 4"""
        grid = Grid.interval(101)

        energy = wave_energy(solve_wave(grid, None, None, sine(grid), tau=4.0))

        assert np.max(np.abs(energy - energy[0])) <= 1e-4 * energy[0]

    @pytest.mark.unit
    def test_damped_energy_is_nonincreasing(self):
        """Test that a = 0.1 makes the energy nonincreasing"""
        grid = Grid.interval(101)

        energy = wave_energy(solve_wave(grid, None, constant(grid, 0.1), sine(grid), tau=2.0))

        assert np.all(np.diff(energy) <= 1e-10 * energy[0])
        assert energy[-1] < energy[0]

    @pytest.mark.unit
    def test_cfl_violation_raises(self):
        """Test that a time step above the CFL limit is refused"""
        grid = Grid.interval(51)

        with pytest.raises(CFLViolation):
            solve_wave(grid, None, None, sine(grid), tau=1.0, dt=2 * grid.h)

    @pytest.mark.unit
    def test_initial_data_must_vanish_on_boundary(self):
        """Test that u0 = 1 is rejected under Dirichlet data"""
        grid = Grid.interval(21)

        with pytest.raises(DomainError):
            solve_wave(grid, None, None, constant(grid, 1.0), tau=0.5)

    @pytest.mark.unit
    def test_duhamel_identity(self):
        """Test that the time derivative of the source-driven solution is g * w"""
        grid = Grid.interval(101)
        f = sine(grid)
        tau = 1.0
        dt = default_dt(grid)
        g = Kernel.from_function(lambda t: np.exp(-t), tau, dt)

        v = solve_wave(grid, None, None, Field.zeros(grid), None, (g, f), tau=tau)
        w = solve_wave(grid, None, None, f, tau=tau)
        expected = convolve(g, w.u)

        assert np.linalg.norm(v.ut - expected) <= 1e-3 * np.linalg.norm(expected)


class TestSolveHeat:
    """Tests for the Crank-Nicolson heat solver"""

    @pytest.mark.unit
    def test_single_mode_decay(self):
        """Test that exp(-pi^2 t) sqrt(2) sin(pi x) is reproduced to 1e-3 relative"""
        grid = Grid.interval(201)
        u0 = sine(grid)

        sol = solve_heat(grid, None, u0, tau=0.5, dt=1e-3)

        exact = Field(grid, math.exp(-math.pi**2 * sol.tau) * u0.values)
        assert norm(sol.final() - exact, "L2") <= 1e-3 * norm(exact, "L2")

    @pytest.mark.unit
    def test_positivity(self):
        """Test that nonnegative data with q >= 0 stays nonnegative"""
        grid = Grid.interval(51)

        sol = solve_heat(grid, constant(grid, 1.0), sine(grid), tau=0.2, dt=1e-3)

        assert np.min(sol.u) >= -1e-10

    @pytest.mark.unit
    def test_needs_data_or_source(self):
        """Test that a heat solve without data or source raises"""
        with pytest.raises(DomainError):
            solve_heat(Grid.interval(11), None, None, tau=0.1, dt=1e-2)


class TestConvergenceOrder:
    """Refinement studies on the standing mode: errors fitted against h with rate_fit"""

    NODES = (21, 41, 81)

    @staticmethod
    def order(errors):
        records = [SweepRecord(h, h, e, 0) for h, e in errors]
        return rate_fit(records, "holder").parameter

    @pytest.mark.unit
    def test_leapfrog_is_second_order(self):
        """Test that the wave error at t = 1/2 (dt = h/2) falls like h^2"""
        errors = []
        for nodes in self.NODES:
            grid = Grid.interval(nodes)
            u0 = sine(grid)
            sol = solve_wave(grid, None, None, u0, tau=0.5, dt=0.5 * grid.h)
            exact = math.cos(math.pi * sol.tau) * u0.values
            errors.append((grid.h, norm(Field(grid, sol.u[-1] - exact), "L2")))

        assert self.order(errors) == pytest.approx(2.0, abs=0.3)

    @pytest.mark.unit
    def test_crank_nicolson_is_second_order(self):
        """Test that the heat error at t = 0.1 (dt = h/10) falls like h^2"""
        errors = []
        for nodes in self.NODES:
            grid = Grid.interval(nodes)
            u0 = sine(grid)
            sol = solve_heat(grid, None, u0, tau=0.1, dt=0.1 * grid.h)
            exact = Field(grid, math.exp(-math.pi**2 * sol.tau) * u0.values)
            errors.append((grid.h, norm(sol.final() - exact, "L2")))

        assert self.order(errors) == pytest.approx(2.0, abs=0.3)

    @pytest.mark.unit
    def test_neumann_trace_is_second_order(self):
        """Test that the left-end trace of the standing mode converges like h^2 over all levels"""
        errors = []
        for nodes in self.NODES:
            grid = Grid.interval(nodes)
            sol = solve_wave(grid, None, None, sine(grid), tau=0.5, dt=0.5 * grid.h)
            trace = neumann_trace(sol, "left")
            exact = -math.sqrt(2) * math.pi * np.cos(math.pi * trace.times)
            errors.append((grid.h, float(np.max(np.abs(trace.values[:, 0] - exact)))))

        assert self.order(errors) == pytest.approx(2.0, abs=0.3)


class TestSquare:
    """Tests for the boundary-damped wave on the square"""

    @pytest.mark.unit
    def test_undamped_ground_mode(self):
        """Test that cos(sqrt(lambda_00) t) phi_00 is reproduced to 5e-3"""
        grid = Grid.square(41)
        lam, phi = mixed_square_eigenpairs(grid, 0, 0)
        zero = np.zeros(41)

        sol = solve_wave_boundary_damped(grid, (zero, zero), phi, tau=1.0)

        exact = math.cos(math.sqrt(lam) * sol.tau) * phi.values
        assert norm(Field(grid, sol.u[-1] - exact), "L2") <= 5e-3

    @pytest.mark.unit
    def test_boundary_damping_dissipates_energy(self):
        """Test that a = 0.5 on the damped edges makes the energy decay"""
        grid = Grid.square(17)
        _, phi = mixed_square_eigenpairs(grid, 0, 0)
        a = np.full(17, 0.5)

        energy = wave_energy(solve_wave_boundary_damped(grid, (a, a), phi, tau=2.0))

        assert np.all(np.diff(energy) <= 1e-10 * energy[0])
        assert energy[-1] < energy[0]

    @pytest.mark.unit
    def test_negative_damping_raises(self):
        """Test that negative edge damping is refused"""
        grid = Grid.square(9)
        _, phi = mixed_square_eigenpairs(grid, 0, 0)

        with pytest.raises(DomainError):
            solve_wave_boundary_damped(grid, (np.full(9, -1.0), np.full(9, -1.0)), phi, tau=0.5)


class TestInitialToBoundary:
    """Tests for probe responses and the initial-to-boundary maps"""

    @pytest.mark.unit
    def test_heat_probe_decays_as_eigenmode(self):
        """Test that u(q, phi_k) = exp(-lambda_k t) phi_k"""
        grid = Grid.interval(101)
        lam, phi = dirichlet_eigenpairs(grid, None, 2).mode(2)

        response = probe_response(
            "heat", grid, Coefficients(), Probe("phi2", phi), tau=0.05, dt=1e-4, label="boundary"
        )

        expected = phi * math.exp(-lam * 0.05)
        assert norm(response.final - expected, "L2") <= 1e-3 * norm(expected, "L2")

    @pytest.mark.unit
    def test_complex_probe_rotates_trace(self):
        """Test that (phi_1, i sqrt(lambda_1) phi_1) has trace exp(i sqrt(lambda_1) t) d_nu phi_1"""
        grid = Grid.interval(101)
        lam, phi = dirichlet_eigenpairs(grid, None, 1).mode(1)
        probe = Probe("phi1", phi, Field(grid, 1j * math.sqrt(lam) * phi.values))

        response = probe_response("wave", grid, Coefficients(), probe, tau=2.0, dt=None, label="boundary")

        base = trace_operator(grid, "boundary")(phi.values)
        expected = np.exp(1j * math.sqrt(lam) * response.trace.times)[:, None] * base[None, :]
        error = np.linalg.norm(response.trace.values - expected)
        assert error <= 1e-3 * np.linalg.norm(expected)

    @pytest.mark.unit
    def test_identical_coefficients_give_zero_difference(self):
        """Test that N(q) - N(q) vanishes on every probe"""
        grid = Grid.interval(41)
        basis = dirichlet_eigenpairs(grid, None, 3)
        probes = [Probe(f"phi{k}", basis.mode(k)[1]) for k in (1, 2, 3)]
        q = constant(grid, 0.5)

        a = initial_to_boundary("heat", grid, Coefficients(q=q), probes, tau=0.1, dt=1e-3, threads=2)
        b = initial_to_boundary("heat", grid, Coefficients(q=q), probes, tau=0.1, dt=1e-3)

        delta = a.difference(b)
        assert delta.probe_ids == ["phi1", "phi2", "phi3"]
        assert all(np.all(t.values == 0) for t in delta.traces)

    @pytest.mark.unit
    def test_distance_grows_with_perturbation(self):
        """Test that the operator distance is positive and roughly linear in the amplitude"""
        grid = Grid.interval(41)
        basis = dirichlet_eigenpairs(grid, None, 3)
        probes = [Probe(f"phi{k}", basis.mode(k)[1]) for k in (1, 2, 3)]
        ref = initial_to_boundary("heat", grid, Coefficients(), probes, tau=0.1, dt=1e-3)
        phi1 = basis.mode(1)[1]

        distances = []
        for amplitude in (0.2, 0.1):
            data = initial_to_boundary("heat", grid, Coefficients(q=phi1 * amplitude), probes, tau=0.1, dt=1e-3)
            distances.append(data.difference(ref).distance("L2"))

        assert distances[0] > distances[1] > 0
        assert distances[0] / distances[1] == pytest.approx(2.0, rel=0.1)

    @pytest.mark.unit
    def test_failing_probe_is_named(self):
        """Test that a probe violating the boundary data raises ProbeFailure with its id"""
        grid = Grid.interval(21)

        with pytest.raises(ProbeFailure) as info:
            initial_to_boundary("wave", grid, Coefficients(), [Probe("bad", constant(grid, 1.0))], tau=0.5)

        assert info.value.probe_id == "bad"

    @pytest.mark.unit
    def test_neumann_trace_matches_probe_response(self):
        """Test that the recorded trace equals the trace of the full solution"""
        grid = Grid.interval(41)
        u0 = sine(grid)

        full = neumann_trace(solve_wave(grid, None, None, u0, tau=1.0), "left")
        response = probe_response("wave", grid, Coefficients(), Probe("s", u0), tau=1.0, dt=None, label="left")

        assert np.allclose(full.values, response.trace.values, atol=1e-12)


class TestObservabilityEstimate:
    """Tests for estimate_observability_constant"""

    @pytest.mark.unit
    def test_positive_and_monotone_in_tau(self):
        """Test that the wave estimate is positive and does not decrease with tau"""
        grid = Grid.interval(51)
        basis = dirichlet_eigenpairs(grid, None, 10)
        probes = [Probe(f"phi{k}", basis.mode(k)[1]) for k in range(1, 11)]

        short = estimate_observability_constant("wave", grid, Coefficients(), probes, tau=2.0)
        long = estimate_observability_constant("wave", grid, Coefficients(), probes, tau=4.0)

        assert short > 0
        assert long >= short

    @pytest.mark.unit
    def test_heat_on_left_endpoint(self):
        """Test that the heat estimate observed at x = 0 is positive"""
        grid = Grid.interval(51)
        basis = dirichlet_eigenpairs(grid, None, 10)
        probes = [Probe(f"phi{k}", basis.mode(k)[1]) for k in range(1, 11)]

        kappa = estimate_observability_constant(
            "heat", grid, Coefficients(), probes, tau=0.2, dt=1e-3, label="left"
        )

        assert kappa > 0

    @pytest.mark.unit
    def test_empty_dictionary_raises(self):
        """Test that an empty probe dictionary raises"""
        with pytest.raises(DomainError):
            estimate_observability_constant("wave", Grid.interval(11), Coefficients(), [], tau=1.0)
