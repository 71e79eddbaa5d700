"""Dense float64 tensors, addressable random streams, and a finite-difference oracle.

Everything here is deliberately tiny: row-major numpy arrays in float64,
counter-style RNG streams built on numpy's SeedSequence, and a central
finite-difference gradient used to verify analytic backprop elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(ValueError):
    """Raised when a tensor contains NaN or Inf where finiteness is required."""


def as_tensor(x) -> np.ndarray:
    """Convert to a float64 ndarray without copying when already float64."""
    return np.asarray(x, dtype=np.float64)


def check_finite(a, context: str = "") -> np.ndarray:
    a = as_tensor(a)
    if not np.all(np.isfinite(a)):
        where = f" in {context}" if context else ""
        raise NonFiniteError(f"non-finite tensor{where}")
    return a


@dataclass(frozen=True)
class RngStream:
    """Addressable, splittable random stream.

    A stream is identified by (seed, key); identical identifiers always
    reproduce the same draw sequence, and child streams derived with
    distinct keys are statistically independent.  Streams are values:
    drawing never mutates them, so a fresh sub-key must be used for each
    independent draw site (e.g. one per training step).
    """

    seed: int
    key: tuple = field(default_factory=tuple)

    def child(self, *subkey) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(subkey))

    def generator(self) -> np.random.Generator:
        # Non-integer key parts are folded in via a stable hash.
        spawn = tuple(
            k if isinstance(k, (int, np.integer)) else _key_hash(k) for k in self.key
        )
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=spawn)
        )


def _key_hash(part) -> int:
    import hashlib

    h = hashlib.blake2b(repr(part).encode(), digest_size=4)
    return int.from_bytes(h.digest(), "little")


def l2_norm(v) -> float:
    """Euclidean norm of a flattened tensor."""
    v = check_finite(v, "l2_norm")
    return float(np.sqrt(np.sum(np.square(v, dtype=np.float64))))


def gaussian_sample(shape, std: float, rng: RngStream) -> np.ndarray:
    """I.i.d. zero-mean Gaussian draws with the given standard deviation.

    Implemented as std * (unit draws) so draws at scale s equal unit-scale
    draws from the same stream multiplied by s, exactly.
    """
    if std < 0:
        raise ValueError(f"negative std: {std}")
    if std == 0:
        return np.zeros(shape, dtype=np.float64)
    return std * rng.generator().standard_normal(shape)


def finite_diff_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at x."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at coordinate {k}")
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad
