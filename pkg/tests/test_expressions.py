"""Unit tests for coefficient expressions and node tables"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from obslab.errors import DomainError
from obslab.expressions import NodeTable, parse_coefficient, parse_expression
from obslab.grid import Field, Grid


class TestParseExpression:
    """Tests for parse_expression"""

    @pytest.mark.unit
    def test_space_expression_on_interval(self):
        """Test that x*(1-x) is sampled at the grid nodes"""
        grid = Grid.interval(5)
        field = parse_expression("x*(1 - x)").on_grid(grid)

        assert np.allclose(field.values, grid.axes[0] * (1 - grid.axes[0]))

    @pytest.mark.unit
    def test_constant_broadcasts(self):
        """Test that a constant fills the grid, the time axis and an edge"""
        expr = parse_expression("0.5")

        assert np.all(expr.on_grid(Grid.square(5)).values == 0.5)
        assert expr.in_time(np.linspace(0, 1, 4)).shape == (4,)
        assert np.all(expr.on_edge(np.linspace(0, 1, 3)) == 0.5)

    @pytest.mark.unit
    def test_complex_time_profile(self):
        """Test that exp(I*t) evaluates to a complex series"""
        t = np.linspace(0, 1, 5)
        values = parse_expression("exp(I*t)").in_time(t)

        assert np.iscomplexobj(values)
        assert np.allclose(values, np.exp(1j * t))

    @pytest.mark.unit
    def test_eigenfunction_symbols(self):
        """Test that phiK is looked up through the eigenfunction callback"""
        grid = Grid.interval(11)
        phi = {1: Field.from_function(grid, lambda x: np.sin(np.pi * x))}
        expr = parse_expression("0.3*phi1")

        assert expr.modes == [1]
        assert np.allclose(expr.on_grid(grid, phi.__getitem__).values, 0.3 * phi[1].values)

    @pytest.mark.unit
    def test_eigenfunction_without_basis_raises(self):
        """Test that phiK needs an eigenbasis"""
        with pytest.raises(DomainError):
            parse_expression("phi2").on_grid(Grid.interval(11))

    @pytest.mark.unit
    @pytest.mark.parametrize("text", ["x +", "z*x", "foo(x)", "x = 1"])
    def test_invalid_text_raises(self, text):
        """Test that syntax errors, unknown names and unknown functions are rejected"""
        with pytest.raises(DomainError):
            parse_expression(text)

    @pytest.mark.unit
    def test_wrong_variable_raises(self):
        """Test that a space expression cannot be used in time"""
        with pytest.raises(DomainError):
            parse_expression("sin(pi*x)").in_time(np.linspace(0, 1, 3))

    @pytest.mark.unit
    def test_non_finite_values_raise(self):
        """Test that 1/x is rejected on a grid containing 0"""
        with pytest.raises(DomainError):
            parse_expression("1/x").on_grid(Grid.interval(5))


class TestNodeTable:
    """Tests for node-table coefficients"""

    @pytest.mark.unit
    def test_list_becomes_table(self):
        """Test that a list parses to a node table"""
        table = parse_coefficient([0.0, 1.0, 2.0])

        assert isinstance(table, NodeTable)
        assert np.array_equal(table.on_edge(np.zeros(3)), [0.0, 1.0, 2.0])

    @pytest.mark.unit
    def test_other_grid_is_interpolated(self):
        """Test that a 3-node table on a 5-node interval is interpolated linearly"""
        field = parse_coefficient([0.0, 1.0, 0.0]).on_grid(Grid.interval(5))

        assert np.allclose(field.values, [0.0, 0.5, 1.0, 0.5, 0.0])

    @pytest.mark.unit
    def test_square_table_is_interpolated(self):
        """Test that a 2x2 table of x + y is reproduced on a 5x5 grid"""
        grid = Grid.square(5)
        x, y = grid.mesh()

        field = parse_coefficient([0.0, 1.0, 1.0, 2.0]).on_grid(grid)

        assert np.allclose(field.values, x + y)

    @pytest.mark.unit
    @pytest.mark.parametrize("values", [[1.0, 2.0, 3.0], [float("nan")] * 4, [1.0]])
    def test_unusable_table_raises(self, values):
        """Test that non-square, non-finite or single-value tables raise DomainError on the square"""
        with pytest.raises(DomainError):
            parse_coefficient(values).on_grid(Grid.square(5))
