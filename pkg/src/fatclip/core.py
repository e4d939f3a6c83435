"""Dense parameter vectors and hierarchical, counter-based random streams.

Parameter vectors are plain 1-D ``float64`` numpy arrays.  The helpers here
only add the dimension/finiteness checks the rest of the package relies on.

Random streams are addressed by ``(root_seed, path)``.  The path is hashed
through :class:`numpy.random.SeedSequence` (as a spawn key) into the key of a
Philox counter-based generator, so the draws of client ``i`` at round ``t`` do
not depend on which other streams were consumed first, or on which thread
consumed them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

ParamVector = np.ndarray


def as_vector(values: Iterable[float] | np.ndarray) -> ParamVector:
    """Return ``values`` as a fresh 1-D float64 array with at least one entry."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("vector dimension must be >= 1")
    return arr


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def vec_add(a: ParamVector, b: ParamVector) -> ParamVector:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dim(a, b)
    return a + b


def vec_scale(a: ParamVector, c: float) -> ParamVector:
    if not np.isfinite(c):
        raise ValueError("scale factor must be finite")
    return np.asarray(a, dtype=np.float64) * float(c)


def vec_norm(a: ParamVector) -> float:
    a = np.asarray(a, dtype=np.float64)
    return math.sqrt(float(np.dot(a, a)))


def vec_dot(a: ParamVector, b: ParamVector) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dim(a, b)
    return float(np.dot(a, b))


def is_finite_vector(a: ParamVector) -> bool:
    return bool(np.all(np.isfinite(a)))


@dataclass(frozen=True)
class RngStream:
    """Immutable address of a random stream.

    Two instances with the same ``root_seed`` and ``path`` produce the same
    sequence of draws; different paths give independent sequences.
    """

    root_seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= int(self.root_seed) < 2**64:
            raise ValueError("root_seed must be a 64-bit unsigned integer")
        path = tuple(int(p) for p in self.path)
        if any(p < 0 for p in path):
            raise ValueError("stream path entries must be non-negative")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", path)

    def derive(self, index: int) -> "RngStream":
        return RngStream(self.root_seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


def derive_stream(root: RngStream, index: int) -> RngStream:
    return root.derive(index)


def stream_at(root_seed: int, path: Sequence[int]) -> RngStream:
    return RngStream(root_seed, tuple(path))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Accept either a stream address or an already-running generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")
