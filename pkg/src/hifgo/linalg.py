"""Dense float64 matrix helpers, splittable seeded RNG and finite differences.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every helper
validates shapes and finiteness at its boundary so that callers get a
:class:`DimensionError` or :class:`NumericError` instead of silent broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Matrix = np.ndarray


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one was required."""

    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


class ConfigError(ValueError):
    """An invalid configuration or parameter value."""


class InputError(ValueError):
    """Invalid or empty input data."""


def as_matrix(x) -> Matrix:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def check_finite(m: Matrix, what: str = "matrix") -> Matrix:
    if not np.all(np.isfinite(m)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(m))[0])
        raise NumericError(f"non-finite entry in {what} at {bad}", bad)
    return m


def frobenius_inner(a: Matrix, b: Matrix) -> float:
    """Sum of elementwise products of two same-shaped matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"frobenius_inner: shape {a.shape} vs {b.shape}")
    # fixed row-major summation order
    return float(np.dot(a.ravel(), b.ravel()))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a @ b


def relative_error(a, b) -> float:
    """Norm-wise relative difference ``|a - b| / max(|a|, |b|)`` (0 when both vanish)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def finite_diff_grad(f: Callable[[Matrix], float], x: Matrix, eps: float = 1e-5) -> Matrix:
    """Central-difference gradient of a scalar function of a matrix."""
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    x = as_matrix(x)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        fp = f(xp)
        fm = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value when perturbing entry {idx}", idx)
        grad[idx] = (fp - fm) / (2.0 * eps)
    return grad


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    The stream is a value: drawing never mutates it. Independent streams are
    obtained with :meth:`child`, which derives a new stream id from the parent
    id and a tuple of integer or string keys.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64 and 0 <= self.stream_id < 2**64):
            raise ConfigError("seed and stream id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32,
                                     self.stream_id & 0xFFFFFFFF, self.stream_id >> 32])
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int | str) -> "RngStream":
        words = [self.stream_id & 0xFFFFFFFF, self.stream_id >> 32]
        for k in keys:
            if isinstance(k, str):
                words.extend(k.encode("utf-8"))
                words.append(0x100)
            else:
                words.append(int(k) & 0xFFFFFFFF)
        state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
        return RngStream(self.seed, int(state[0]) | (int(state[1]) << 32))


def gaussian_matrix(rng: RngStream, rows: int, cols: int, std: float = 1.0) -> Matrix:
    if std < 0:
        raise ConfigError(f"std must be non-negative, got {std}")
    if std == 0:
        return np.zeros((rows, cols))
    return rng.generator().normal(0.0, std, size=(rows, cols))


def flatten(mats: Sequence[Matrix]) -> np.ndarray:
    return np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in mats])


def unflatten(vec: np.ndarray, shapes: Sequence[tuple[int, int]]) -> list[Matrix]:
    out, pos = [], 0
    for r, c in shapes:
        out.append(np.asarray(vec[pos:pos + r * c], dtype=np.float64).reshape(r, c).copy())
        pos += r * c
    if pos != len(vec):
        raise DimensionError(f"vector of length {len(vec)} does not match shapes {list(shapes)}")
    return out


def layers_inner(a: Sequence[Matrix], b: Sequence[Matrix]) -> float:
    """Frobenius inner product summed over layers in layer order."""
    if len(a) != len(b):
        raise DimensionError(f"layer count mismatch: {len(a)} vs {len(b)}")
    return float(sum(frobenius_inner(x, y) for x, y in zip(a, b)))


def layers_norm(a: Sequence[Matrix]) -> float:
    return float(np.sqrt(layers_inner(a, a)))
