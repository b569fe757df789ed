"""Portable seeded noise: xoshiro256** seeded through SplitMix64."""

import math

import numpy as np

MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256StarStar:
    """xoshiro256** 1.0 with uniform doubles in [0, 1) and Box–Muller normals."""

    def __init__(self, seed: int | None = None, state: list[int] | None = None):
        if state is not None:
            if len(state) != 4 or not any(state):
                raise ValueError("state must be four 64-bit words, not all zero")
            self.s = [w & MASK64 for w in state]
        else:
            mixer = SplitMix64(0 if seed is None else seed)
            self.s = [mixer.next() for _ in range(4)]
        self._spare: float | None = None

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next() >> 11) * 2.0**-53

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.array([self.normal() for _ in range(count)]).reshape(shape)


def add_noise(values: np.ndarray, sigma: float, rng: Xoshiro256StarStar) -> np.ndarray:
    """values + σ·N(0,1); complex arrays get independent noise on both parts."""
    values = np.asarray(values)
    if sigma == 0:
        return values.copy()
    noisy = values + sigma * rng.normals(values.shape)
    if np.iscomplexobj(values):
        noisy = noisy + 1j * sigma * rng.normals(values.shape)
    return noisy
