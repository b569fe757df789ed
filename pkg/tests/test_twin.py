"""Tests for twin-experiment data synthesis"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from obslab.errors import ConfigError, DomainError
from obslab.forward import Coefficients, Probe
from obslab.grid import BoundaryTrace, Field, Grid, Kernel
from obslab.operators import trace_operator
from obslab.stability import SweepRecord, rate_fit
from obslab.twin import TwinSetup, check_refinement


def sine_probes(grid):
    return [
        Probe("sin1", Field.from_function(grid, lambda x: np.sqrt(2) * np.sin(np.pi * x))),
        Probe("sin2", Field.from_function(grid, lambda x: np.sqrt(2) * np.sin(2 * np.pi * x))),
    ]


class TestCheckRefinement:
    """Tests for check_refinement"""

    @pytest.mark.unit
    def test_integer_ratio(self):
        """Test that 21 -> 41 nodes is a refinement by 2"""
        assert check_refinement(Grid.interval(21), Grid.interval(41)) == 2

    @pytest.mark.unit
    @pytest.mark.parametrize("fine", [21, 31])
    def test_same_or_fractional_grid_raises(self, fine):
        """Test that the forward grid must refine by an integer factor of at least 2"""
        with pytest.raises(ConfigError):
            check_refinement(Grid.interval(21), Grid.interval(fine))


class TestTwinSetup:
    """Tests for TwinSetup"""

    @pytest.mark.unit
    def test_wave_steps_scale_with_refinement(self):
        """Test that the wave forward step is dt / r and traces are strided by r"""
        twin = TwinSetup("wave", Grid.interval(21), Grid.interval(61), tau=0.5, dt=0.02)

        assert twin.ratio == 3
        assert twin.fine_dt == pytest.approx(0.02 / 3)
        assert twin.stride == 3

    @pytest.mark.unit
    def test_heat_needs_dt(self):
        """Test that heat twins reject a missing dt"""
        with pytest.raises(DomainError):
            TwinSetup("heat", Grid.interval(21), Grid.interval(41), tau=0.1)

    @pytest.mark.integration
    def test_identical_coefficients_give_zero_data(self):
        """Test that equal truth and reference coefficients give exactly zero traces"""
        twin = TwinSetup("heat", Grid.interval(11), Grid.interval(21), tau=0.05, dt=1e-3)
        coefficients = Coefficients(q=Field.zeros(twin.fine))

        data = twin.differences(coefficients, coefficients, sine_probes)

        assert data.probe_ids == ["sin1", "sin2"]
        assert data.distance("L2") == 0.0
        assert data[0].trace.values.shape == (51, 2)
        assert data[0].probe.u0.grid == twin.coarse

    @pytest.mark.integration
    def test_noise_is_seeded(self):
        """Test that the same seed reproduces the noisy data and another seed does not"""
        twin = TwinSetup("wave", Grid.interval(11), Grid.interval(21), tau=0.2)
        truth = Coefficients(q=Field.from_function(twin.fine, lambda x: 1 + 0 * x))

        first = twin.differences(truth, Coefficients(), sine_probes, noise=1e-3, seed=4)
        again = twin.differences(truth, Coefficients(), sine_probes, noise=1e-3, seed=4)
        other = twin.differences(truth, Coefficients(), sine_probes, noise=1e-3, seed=5)

        assert np.array_equal(first[1].trace.values, again[1].trace.values)
        assert not np.array_equal(first[1].trace.values, other[1].trace.values)

    @pytest.mark.unit
    def test_mismatched_probe_dictionaries_raise(self):
        """Test that the builder must return the same ids on both grids"""
        twin = TwinSetup("heat", Grid.interval(11), Grid.interval(21), tau=0.01, dt=1e-3)

        def builder(grid):
            return sine_probes(grid)[: 1 if grid == twin.fine else 2]

        with pytest.raises(DomainError):
            twin.differences(Coefficients(), Coefficients(), builder)

    @pytest.mark.unit
    def test_gamma0_restriction_on_the_square(self):
        """Test that restricting a gamma0 trace keeps each coarse node, the shared corner once"""
        twin = TwinSetup("square", Grid.square(5), Grid.square(9), tau=0.2, label="gamma0")
        fine = trace_operator(twin.fine, "gamma0")
        columns = np.arange(fine.coords.shape[0], dtype=float)
        trace = BoundaryTrace("gamma0", twin.fine_dt, np.tile(columns, (5, 1)), fine.weights, fine.coords)

        coarse = twin.restrict_trace(trace)

        assert coarse.values.shape == (3, 9)
        picked = fine.coords[coarse.values[0].astype(int)]
        assert np.allclose(picked, trace_operator(twin.coarse, "gamma0").coords)

    @pytest.mark.integration
    def test_noise_leaves_the_initial_row_exact(self):
        """Test that noisy heat data still vanish at t = 0 and are perturbed afterwards"""
        twin = TwinSetup("heat", Grid.interval(11), Grid.interval(21), tau=0.02, dt=1e-3)
        truth = Coefficients(q=Field.from_function(twin.fine, lambda x: 1 + 0 * x))

        data = twin.differences(truth, Coefficients(), sine_probes, noise=1e-3, seed=2)
        clean = twin.differences(truth, Coefficients(), sine_probes)

        for noisy, exact in zip(data, clean):
            assert np.all(noisy.trace.values[0] == 0.0)
            assert not np.array_equal(noisy.trace.values[1:], exact.trace.values[1:])

    @pytest.mark.integration
    def test_noisy_source_trace_starts_at_zero(self):
        """Test that the source trace keeps its zero initial row under noise"""
        twin = TwinSetup("heat", Grid.interval(11), Grid.interval(21), tau=0.02, dt=1e-3)

        def source(grid, dt):
            kernel = Kernel.from_function(lambda t: np.ones_like(t), twin.tau, dt)
            return kernel, Field.from_function(grid, lambda x: np.sin(np.pi * x))

        trace = twin.source_trace(Coefficients(), source, noise=1e-3, seed=1)

        assert np.all(trace.values[0] == 0.0)
        assert np.any(trace.values[1:] != 0.0)

    @pytest.mark.integration
    def test_differences_are_linear_at_small_amplitude(self):
        """Test that the data distance grows with unit log-log slope in the potential amplitude"""
        twin = TwinSetup("heat", Grid.interval(21), Grid.interval(41), tau=0.05, dt=1e-3)
        records = []
        for c in (1e-1, 1e-2, 1e-3):
            truth = Coefficients(q=Field.from_function(twin.fine, lambda x: c * np.sqrt(2) * np.sin(np.pi * x)))
            data = twin.differences(truth, Coefficients(), sine_probes)
            records.append(SweepRecord(c, c, data.distance("L2"), 0))

        assert rate_fit(records, "holder").parameter == pytest.approx(1.0, abs=0.2)
