"""Unit tests for the eigen-solvers"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from obslab.errors import DomainError
from obslab.grid import Field, Grid
from obslab.inequalities import hopf_constant
from obslab.spectral import (
    damped_quadratic_eigenpairs,
    dirichlet_eigenpairs,
    mixed_square_eigenpairs,
    mixed_square_eigenvalue,
    mixed_square_modes,
    weyl_bracket_holds,
)
from obslab.stability import SweepRecord, rate_fit


@pytest.fixture
def interval():
    return Grid.interval(201)


class TestDirichletEigenpairs:
    """Tests for dirichlet_eigenpairs"""

    @pytest.mark.unit
    def test_ground_state_of_laplacian(self, interval):
        """Test that q = 0 gives lambda_1 ~ pi^2 and phi_1 = sqrt(2) sin(pi x)"""
        basis = dirichlet_eigenpairs(interval, None, 3)
        lam, phi = basis.mode(1)

        assert lam == pytest.approx(math.pi**2, rel=1e-3)
        assert np.allclose(phi.values, math.sqrt(2) * np.sin(np.pi * interval.axes[0]), atol=1e-8)

    @pytest.mark.unit
    def test_constant_potential_shifts_spectrum(self, interval):
        """Test that q = c adds c to every eigenvalue"""
        free = dirichlet_eigenpairs(interval, None, 5)
        shifted = dirichlet_eigenpairs(interval, Field.from_function(interval, lambda x: 5.0 + 0 * x), 5)

        assert np.allclose(shifted.eigenvalues - free.eigenvalues, 5.0, atol=1e-8)

    @pytest.mark.unit
    def test_eigenvalues_nondecreasing_and_in_weyl_bracket(self, interval):
        """Test ordering and the Weyl bracket for a bounded potential"""
        q = Field.from_function(interval, lambda x: x)
        basis = dirichlet_eigenpairs(interval, q, 8)

        assert np.all(np.diff(basis.eigenvalues) > 0)
        assert weyl_bracket_holds(basis.eigenvalues, 1.0)

    @pytest.mark.unit
    def test_linear_potential_ground_state(self):
        """Test that q = x shifts lambda_1 to pi^2 + 1/2 - 256/(243 pi^6) and keeps phi_1 positive"""
        grid = Grid.interval(401)
        q = Field.from_function(grid, lambda x: x)

        lam, phi = dirichlet_eigenpairs(grid, q, 2).mode(1)

        assert lam == pytest.approx(math.pi**2 + 0.5 - 256 / (243 * math.pi**6), abs=3e-4)
        assert np.all(phi.values[1:-1] > 0)
        assert hopf_constant(phi) > 0

    @pytest.mark.unit
    def test_ground_eigenvalue_converges_at_second_order(self):
        """Test that the lambda_1 error against pi^2 has log-log slope 2 +/- 0.2"""
        records = []
        for nodes in (21, 41, 81):
            grid = Grid.interval(nodes)
            lam = dirichlet_eigenpairs(grid, None, 1).mode(1)[0]
            records.append(SweepRecord(grid.h, grid.h, abs(lam - math.pi**2), 0))

        assert rate_fit(records, "holder").parameter == pytest.approx(2.0, abs=0.2)

    @pytest.mark.unit
    def test_coefficients_and_synthesis(self, interval):
        """Test that phi_1 + 0.5 phi_3 has coefficients (1, 0, 0.5, 0)"""
        basis = dirichlet_eigenpairs(interval, None, 4)
        f = basis.mode(1)[1] + basis.mode(3)[1] * 0.5

        c = basis.coefficients(f)

        assert np.allclose(c, [1.0, 0.0, 0.5, 0.0], atol=1e-10)
        assert np.allclose(basis.synthesize(c).values, f.values, atol=1e-10)

    @pytest.mark.unit
    def test_count_out_of_range_raises(self):
        """Test that asking for more modes than free nodes raises"""
        with pytest.raises(DomainError):
            dirichlet_eigenpairs(Grid.interval(5), None, 4)

    @pytest.mark.unit
    def test_mode_index_is_one_based(self, interval):
        """Test that mode(0) is rejected"""
        basis = dirichlet_eigenpairs(interval, None, 2)

        with pytest.raises(DomainError):
            basis.mode(0)

    @pytest.mark.unit
    def test_square_ground_state(self):
        """Test that the square's ground state is close to 2 pi^2"""
        basis = dirichlet_eigenpairs(Grid.square(21), None, 3)

        assert basis.eigenvalues[0] == pytest.approx(2 * math.pi**2, rel=2e-2)
        assert basis.eigenvalues[1] == pytest.approx(basis.eigenvalues[2], rel=1e-8)


class TestMixedSquare:
    """Tests for the explicit mixed eigenpairs"""

    @pytest.mark.unit
    def test_ground_eigenvalue(self):
        """Test that lambda_00 = pi^2 / 2"""
        assert mixed_square_eigenvalue(0, 0) == pytest.approx(math.pi**2 / 2)

    @pytest.mark.unit
    def test_modes_sorted_by_eigenvalue(self):
        """Test the first modes and the tie order"""
        assert mixed_square_modes(4) == [(0, 0), (0, 1), (1, 0), (1, 1)]

    @pytest.mark.unit
    def test_eigenfunction_vanishes_on_gamma0(self):
        """Test that phi_kl is exactly zero on the top and right edges"""
        _, phi = mixed_square_eigenpairs(Grid.square(9), 1, 2)

        assert np.all(phi.values[-1, :] == 0.0)
        assert np.all(phi.values[:, -1] == 0.0)

    @pytest.mark.unit
    def test_needs_square(self):
        """Test that the interval is rejected"""
        with pytest.raises(DomainError):
            mixed_square_eigenpairs(Grid.interval(9), 0, 0)


class TestDampedQuadratic:
    """Tests for damped_quadratic_eigenpairs"""

    @pytest.mark.unit
    def test_undamped_spectrum_is_imaginary(self):
        """Test that a = 0, q = 0 gives mu = +/- i pi to leading order"""
        grid = Grid.interval(101)

        pairs = damped_quadratic_eigenpairs(grid, None, None, 2)

        for pair in pairs:
            assert abs(pair.mu.real) < 1e-8
            assert abs(pair.mu.imag) == pytest.approx(math.pi, rel=1e-3)

    @pytest.mark.unit
    def test_constant_damping_closed_form(self):
        """Test that a = alpha gives Re mu = -alpha/2"""
        grid = Grid.interval(101)
        a = Field.from_function(grid, lambda x: 0.2 + 0 * x)

        pairs = damped_quadratic_eigenpairs(grid, None, a, 2)

        for pair in pairs:
            assert pair.mu.real == pytest.approx(-0.1, abs=1e-8)
            assert pair.residual < 1e-6

    @pytest.mark.unit
    def test_linear_damping_ground_pair(self):
        """Test that a = x damps the first pair at rate 1/4 with frequency near sqrt(pi^2 - 1/16)"""
        grid = Grid.interval(101)
        a = Field.from_function(grid, lambda x: x)

        pairs = damped_quadratic_eigenpairs(grid, None, a, 2)

        for pair in pairs:
            assert pair.mu.real == pytest.approx(-0.25, abs=5e-3)
            assert abs(pair.mu.imag) == pytest.approx(math.sqrt(math.pi**2 - 1 / 16), abs=6e-3)
            assert pair.residual < 1e-6
        assert pairs[0].mu == pytest.approx(pairs[1].mu.conjugate())
