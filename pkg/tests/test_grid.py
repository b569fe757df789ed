"""Unit tests for grids, fields, traces, kernels and norms"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from obslab.errors import DomainError
from obslab.grid import BoundaryTrace, Field, Grid, Kernel, restrict, time_levels
from obslab.norms import inner, norm
from obslab.operators import assemble, trace_operator


class TestGrid:
    """Tests for Grid"""

    @pytest.mark.unit
    def test_spacing(self):
        """Test that spacing is 1/(nodes - 1) per axis"""
        assert Grid.interval(5).spacing == (0.25,)
        assert Grid.square(11).h == pytest.approx(0.1)

    @pytest.mark.unit
    def test_refinement_ratio(self):
        """Test that refinement ratios are detected and non-refinements give 0"""
        coarse = Grid.interval(26)

        assert coarse.refinement_ratio(Grid.interval(51)) == 2
        assert coarse.refinement_ratio(Grid.interval(101)) == 4
        assert coarse.refinement_ratio(Grid.interval(50)) == 0
        assert coarse.refinement_ratio(Grid.square(51)) == 0
        assert coarse.refined(3) == Grid.interval(76)

    @pytest.mark.unit
    def test_mixed_labels_on_square(self):
        """Test that gamma0 is top and right, gamma1 bottom and left"""
        grid = Grid.square(5)

        assert grid.edges("gamma0") == ("top", "right")
        assert grid.edges("gamma1") == ("bottom", "left")

    @pytest.mark.unit
    def test_unknown_label_raises(self):
        """Test that an unknown boundary label raises DomainError"""
        with pytest.raises(DomainError):
            Grid.interval(5).edges("top")

    @pytest.mark.unit
    def test_too_few_nodes_raises(self):
        """Test that fewer than 3 nodes per axis is rejected"""
        with pytest.raises(DomainError):
            Grid.interval(2)


class TestTimeLevels:
    """Tests for time_levels"""

    @pytest.mark.unit
    def test_counts_both_ends(self):
        """Test that floor(tau/dt) + 1 rows are produced despite rounding"""
        assert time_levels(1.0, 0.1) == 11
        assert time_levels(0.3, 0.1) == 4

    @pytest.mark.unit
    def test_nonpositive_dt_raises(self):
        """Test that dt <= 0 raises DomainError"""
        with pytest.raises(DomainError):
            time_levels(1.0, 0.0)


class TestField:
    """Tests for Field"""

    @pytest.mark.unit
    def test_wrong_size_raises(self):
        """Test that a value count different from the node count raises"""
        with pytest.raises(DomainError):
            Field(Grid.interval(5), np.zeros(4))

    @pytest.mark.unit
    def test_flat_values_are_reshaped(self):
        """Test that flat values are reshaped to the grid shape"""
        f = Field(Grid.square(3), np.arange(9.0))

        assert f.values.shape == (3, 3)

    @pytest.mark.unit
    def test_arithmetic_on_different_grids_raises(self):
        """Test that combining fields from different grids raises"""
        a = Field.zeros(Grid.interval(5))
        b = Field.zeros(Grid.interval(9))

        with pytest.raises(DomainError):
            a + b

    @pytest.mark.unit
    def test_restrict_samples_every_other_node(self):
        """Test that restriction keeps the coarse nodes"""
        fine = Field.from_function(Grid.interval(9), lambda x: x**2)

        coarse = restrict(fine, Grid.interval(5))

        assert np.allclose(coarse.values, np.linspace(0, 1, 5) ** 2)

    @pytest.mark.unit
    def test_vanishes_on_boundary(self):
        """Test the boundary check on a sine and a constant"""
        grid = Grid.interval(11)

        assert Field.from_function(grid, lambda x: np.sin(np.pi * x)).vanishes_on_boundary()
        assert not Field.from_function(grid, lambda x: np.ones_like(x)).vanishes_on_boundary()


class TestNorms:
    """Tests for the discrete norms"""

    @pytest.mark.unit
    def test_normalized_eigenfunction_has_unit_l2(self):
        """Test that sqrt(2) sin(pi x) has L2 norm 1 within 2h^2"""
        grid = Grid.interval(51)
        f = Field.from_function(grid, lambda x: math.sqrt(2) * np.sin(np.pi * x))

        assert abs(norm(f, "L2") - 1.0) <= 2 * grid.h**2

    @pytest.mark.unit
    def test_h10_of_parabola(self):
        """Test that x(1-x) has H10 norm 1/sqrt(3) within 2h^2"""
        grid = Grid.interval(101)
        f = Field.from_function(grid, lambda x: x * (1 - x))

        assert abs(norm(f, "H10") - 1 / math.sqrt(3)) <= 2 * grid.h**2

    @pytest.mark.unit
    def test_zero_field_has_zero_norm(self):
        """Test that every norm kind of the zero field is 0"""
        f = Field.zeros(Grid.square(5))

        for kind in ("L2", "H10", "H2", "V", "dualV"):
            assert norm(f, kind) == 0.0

    @pytest.mark.unit
    @pytest.mark.parametrize("values", [np.zeros(3), np.array([0.0, 1.0, 0.0])])
    def test_h2_on_three_nodes_raises(self, values):
        """Test that H2 rejects a 3-node grid whether or not the field vanishes"""
        with pytest.raises(DomainError):
            norm(Field(Grid.interval(3), values), "H2")

    @pytest.mark.unit
    def test_unknown_kind_raises(self):
        """Test that an unknown norm kind raises DomainError"""
        with pytest.raises(DomainError):
            norm(Field.zeros(Grid.interval(5)), "H3")

    @pytest.mark.unit
    def test_mixed_ground_mode_is_normalized(self):
        """Test that the square's mixed ground mode has unit L2 norm"""
        grid = Grid.square(21)
        phi = Field.from_function(
            grid, lambda x, y: 2 * np.cos(np.pi * x / 2) * np.cos(np.pi * y / 2)
        )

        assert inner(phi, phi) == pytest.approx(1.0, abs=4 * grid.h**2)


class TestTraceOperator:
    """Tests for the outward normal derivative"""

    @pytest.mark.unit
    def test_linear_field_outward_signs(self):
        """Test that u = x has trace -1 at x = 0 and +1 at x = 1"""
        grid = Grid.interval(11)
        tr = trace_operator(grid, "boundary")

        values = tr(np.linspace(0, 1, 11))

        assert np.allclose(values, [-1.0, 1.0])

    @pytest.mark.unit
    def test_sine_trace_at_left_endpoint(self):
        """Test that sqrt(2) sin(pi x) has outward derivative -sqrt(2) pi at 0"""
        grid = Grid.interval(201)
        x = grid.axes[0]
        tr = trace_operator(grid, "left")

        value = tr(math.sqrt(2) * np.sin(np.pi * x))[0]

        assert value == pytest.approx(-math.sqrt(2) * math.pi, abs=1e-3)

    @pytest.mark.unit
    def test_gamma1_drops_corner_touching_gamma0(self):
        """Test that gamma1 on the square skips the corners shared with gamma0"""
        grid = Grid.square(5)

        assert trace_operator(grid, "gamma1").coords.shape == (7, 2)
        assert trace_operator(grid, "gamma0").coords.shape == (9, 2)

    @pytest.mark.unit
    @pytest.mark.parametrize("label, count, length", [("boundary", 16, 4.0), ("gamma0", 9, 2.0)])
    def test_shared_corners_appear_once(self, label, count, length):
        """Test that every boundary node is listed once and the weights still add up to the edge length"""
        tr = trace_operator(Grid.square(5), label)

        assert len(np.unique(tr.coords, axis=0)) == count == tr.coords.shape[0]
        assert np.sum(tr.weights) == pytest.approx(length)


class TestAssemble:
    """Tests for operator assembly"""

    @pytest.mark.unit
    def test_free_node_counts(self):
        """Test that Dirichlet keeps interior nodes and mixed adds the Neumann edges"""
        grid = Grid.square(5)

        assert assemble(grid, "dirichlet").size == 9
        assert assemble(grid, "mixed").size == 16

    @pytest.mark.unit
    def test_unknown_boundary_kind_raises(self):
        """Test that an unknown boundary kind raises DomainError"""
        with pytest.raises(DomainError):
            assemble(Grid.interval(5), "robin")


class TestBoundaryTrace:
    """Tests for BoundaryTrace"""

    @pytest.mark.unit
    def test_constant_trace_norm(self):
        """Test that a unit trace on both endpoints over (0, 1) has L2 norm sqrt(2)"""
        trace = BoundaryTrace("boundary", 0.01, np.ones((101, 2)), np.ones(2), np.array([[0.0], [1.0]]))

        assert trace.norm("L2") == pytest.approx(math.sqrt(2))
        assert trace.norm("H1") == pytest.approx(math.sqrt(2))
        assert trace.tau == pytest.approx(1.0)

    @pytest.mark.unit
    def test_shape_mismatch_raises(self):
        """Test that values not matching the node weights raise"""
        with pytest.raises(DomainError):
            BoundaryTrace("boundary", 0.1, np.ones((3, 3)), np.ones(2), np.zeros((2, 1)))

    @pytest.mark.unit
    def test_subtracting_different_labels_raises(self):
        """Test that traces on different labels cannot be subtracted"""
        a = BoundaryTrace("left", 0.1, np.ones((3, 1)), np.ones(1), np.zeros((1, 1)))
        b = BoundaryTrace("right", 0.1, np.ones((3, 1)), np.ones(1), np.ones((1, 1)))

        with pytest.raises(DomainError):
            a - b


class TestKernel:
    """Tests for Kernel"""

    @pytest.mark.unit
    def test_from_function_broadcasts_constants(self):
        """Test that a constant kernel expression is broadcast over time"""
        kernel = Kernel.from_function(lambda t: 1.0, 1.0, 0.25)

        assert np.array_equal(kernel.samples, np.ones(5))
        assert kernel.value0 == 1.0

    @pytest.mark.unit
    def test_truncated_beyond_length_raises(self):
        """Test that truncating past the sample count raises"""
        kernel = Kernel(np.ones(3), 0.1)

        with pytest.raises(DomainError):
            kernel.truncated(4)
