"""Dense matrix helpers and reproducible random streams.

Weight matrices are ``(d, m)`` float64 arrays whose *columns* are the
per-neuron weight vectors, so the column-wise norms below are the natural
measuring sticks for how far training moves individual neurons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_matrix(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix with positive shape, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("matrix contains non-finite entries")
    return mat


def norm_2_1(mat: np.ndarray) -> float:
    """Sum of column 2-norms."""
    mat = _check_matrix(mat)
    return float(np.linalg.norm(mat, axis=0).sum())


def norm_2_inf(mat: np.ndarray) -> float:
    """Largest column 2-norm."""
    mat = _check_matrix(mat)
    return float(np.linalg.norm(mat, axis=0).max())


def frobenius(mat: np.ndarray) -> float:
    mat = _check_matrix(mat)
    return float(np.linalg.norm(mat))


def require_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Validate and return ``arr`` as float64; rejects NaN/Inf."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class RngStream:
    """Counter-style random stream: a master seed plus a stream path.

    Two streams with the same ``(seed, stream)`` always produce the same
    sample sequence; distinct paths give statistically independent streams.
    Streams are stateless: ``generator()`` always restarts from the stream
    origin, so every consumer must derive its own child stream rather than
    drawing twice from the same one.
    """

    seed: int
    stream: tuple[int, ...] = ()

    def child(self, *tags: int) -> "RngStream":
        """Derive an independent sub-stream keyed by integer tags."""
        return RngStream(self.seed, self.stream + tuple(int(t) for t in tags))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.stream))


def sample_gaussian(rng: RngStream, n: int, variance: float) -> np.ndarray:
    """``n`` i.i.d. draws from N(0, variance)."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    if n < 0:
        raise ValueError("n must be non-negative")
    return rng.generator().normal(0.0, np.sqrt(variance), size=n)


def sample_uniform_sym(rng: RngStream, n: int, half_width: float) -> np.ndarray:
    """``n`` i.i.d. draws from Uniform[-half_width, +half_width]."""
    if half_width <= 0:
        raise ValueError(f"half_width must be positive, got {half_width}")
    if n < 0:
        raise ValueError("n must be non-negative")
    return rng.generator().uniform(-half_width, half_width, size=n)
