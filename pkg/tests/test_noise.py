"""Unit tests for the seeded noise generator"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from obslab.noise import SplitMix64, Xoshiro256StarStar, add_noise


class TestSplitMix64:
    """Tests for the seeding generator"""

    @pytest.mark.unit
    def test_first_output_for_seed_zero(self):
        """Test that SplitMix64(0) reproduces the published first output"""
        assert SplitMix64(0).next() == 0xE220A8397B1DCDAF


class TestXoshiro256StarStar:
    """Tests for xoshiro256**"""

    @pytest.mark.unit
    def test_reference_sequence_from_explicit_state(self):
        """Test that state [1, 2, 3, 4] yields 11520, 0, 1509978240"""
        rng = Xoshiro256StarStar(state=[1, 2, 3, 4])

        assert [rng.next() for _ in range(3)] == [11520, 0, 1509978240]

    @pytest.mark.unit
    def test_rejects_all_zero_state(self):
        """Test that the all-zero state is refused"""
        with pytest.raises(ValueError):
            Xoshiro256StarStar(state=[0, 0, 0, 0])

    @pytest.mark.unit
    def test_uniform_in_unit_interval(self):
        """Test that uniform doubles lie in [0, 1)"""
        rng = Xoshiro256StarStar(seed=42)
        values = [rng.uniform() for _ in range(1000)]

        assert min(values) >= 0.0
        assert max(values) < 1.0

    @pytest.mark.unit
    def test_same_seed_same_normals(self):
        """Test that equal seeds give bitwise-identical normal samples"""
        a = Xoshiro256StarStar(seed=7).normals((5, 3))
        b = Xoshiro256StarStar(seed=7).normals((5, 3))

        assert np.array_equal(a, b)

    @pytest.mark.unit
    def test_different_seeds_differ(self):
        """Test that different seeds give different samples"""
        a = Xoshiro256StarStar(seed=1).normals(8)
        b = Xoshiro256StarStar(seed=2).normals(8)

        assert not np.array_equal(a, b)

    @pytest.mark.unit
    def test_normals_are_roughly_standard(self):
        """Test that Box-Muller samples have mean 0 and variance 1"""
        z = Xoshiro256StarStar(seed=3).normals(20000)

        assert abs(np.mean(z)) < 0.05
        assert abs(np.var(z) - 1.0) < 0.05


class TestAddNoise:
    """Tests for add_noise"""

    @pytest.mark.unit
    def test_zero_sigma_returns_copy(self):
        """Test that sigma = 0 leaves values unchanged and copies them"""
        values = np.arange(4.0)

        noisy = add_noise(values, 0.0, Xoshiro256StarStar(seed=0))

        assert np.array_equal(noisy, values)
        assert noisy is not values

    @pytest.mark.unit
    def test_complex_values_get_imaginary_noise(self):
        """Test that complex arrays receive noise on both parts"""
        values = np.zeros(10, dtype=complex)

        noisy = add_noise(values, 0.1, Xoshiro256StarStar(seed=0))

        assert np.any(noisy.real != 0)
        assert np.any(noisy.imag != 0)

    @pytest.mark.unit
    def test_reproducible(self):
        """Test that the same seed gives the same noisy array"""
        values = np.ones((3, 4))

        a = add_noise(values, 0.01, Xoshiro256StarStar(seed=9))
        b = add_noise(values, 0.01, Xoshiro256StarStar(seed=9))

        assert np.array_equal(a, b)
