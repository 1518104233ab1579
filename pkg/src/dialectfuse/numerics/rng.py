"""Counter-based SplitMix64 random streams.

Output ``i`` of a stream is ``mix(seed + (i + 1) * GOLDEN)``, so a stream is a
pure function of its seed and counter. Everything is vectorised over uint64
arrays; results are bit-identical on any platform with IEEE doubles.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic generator; identical seed and call sequence give identical bits."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def bits(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * _GOLDEN
        return _mix(z)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        u = low + (high - low) * u
        return u.reshape(shape) if shape else u[0]

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Box-Muller normals."""
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform((m,))  # (0, 1]
        u2 = self.uniform((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        z = mean + std * z
        return z.reshape(shape) if shape else z[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(shape)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform((n,)), kind="stable")

    def choice(self, options, shape=()):
        options = np.asarray(options)
        return options[self.integers(0, len(options), shape)]

    def spawn(self, key: int) -> "Rng":
        """Independent child stream; does not advance this one."""
        z = _mix(np.array([self.seed ^ ((int(key) * 0xD1B54A32D192ED03) & _MASK)], dtype=np.uint64))
        return Rng(int(z[0]))

    def state(self) -> dict:
        return {"seed": self.seed, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        rng.counter = int(state["counter"])
        return rng
