"""LoRA adapters, frozen per-task deltas and weight merging."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import (
    ConfigError,
    DimensionError,
    Matrix,
    RngStream,
    frobenius_inner,
    gaussian_matrix,
    matmul,
)

DEFAULT_INIT_STD = 0.02


def _frozen(m) -> Matrix:
    arr = np.array(m, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LoraLayer:
    b: Matrix  # d x r
    a: Matrix  # r x k

    def __post_init__(self):
        object.__setattr__(self, "b", _frozen(self.b))
        object.__setattr__(self, "a", _frozen(self.a))
        if self.b.shape[1] != self.a.shape[0]:
            raise DimensionError(f"factor ranks disagree: B {self.b.shape}, A {self.a.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.b.shape[0], self.a.shape[1])

    @property
    def rank(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class LoraAdapter:
    """Per-layer factor pairs ``(B, A)`` with a shared scale ``s``; ``dW = s * B @ A``."""

    layers: tuple[LoraLayer, ...]
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.scale > 0:
            raise ConfigError(f"adapter scale must be positive, got {self.scale}")
        for layer in self.layers:
            d, k = layer.shape
            if layer.rank > min(d, k):
                raise ConfigError(f"rank {layer.rank} exceeds min{(d, k)}")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [layer.shape for layer in self.layers]

    def with_factors(self, factors: Sequence[tuple[Matrix, Matrix]]) -> "LoraAdapter":
        return LoraAdapter(tuple(LoraLayer(b, a) for b, a in factors), self.scale)


@dataclass(frozen=True)
class BaseWeights:
    """Frozen pretrained weights ``W_0`` plus optional (never adapted) biases."""

    weights: tuple[Matrix, ...]
    biases: tuple[np.ndarray | None, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        biases = tuple(self.biases) or (None,) * len(self.weights)
        if len(biases) != len(self.weights):
            raise DimensionError("one bias entry (or None) per layer is required")
        frozen = []
        for w, b in zip(self.weights, biases):
            if b is not None:
                b = np.array(b, dtype=np.float64, copy=True).ravel()
                if b.shape[0] != w.shape[0]:
                    raise DimensionError(f"bias length {b.shape[0]} vs layer rows {w.shape[0]}")
                b.setflags(write=False)
            frozen.append(b)
        object.__setattr__(self, "biases", tuple(frozen))

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]


@dataclass(frozen=True)
class DeltaStack:
    """Ordered effective deltas of completed tasks, one per-layer tuple per task."""

    entries: tuple[tuple[Matrix, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "entries", tuple(tuple(_frozen(m) for m in e) for e in self.entries)
        )

    def __len__(self) -> int:
        return len(self.entries)

    def prefix(self, j: int) -> "DeltaStack":
        """Stack holding the first ``j`` task deltas."""
        return DeltaStack(self.entries[:j])


def init_adapter(shapes: Sequence[tuple[int, int]], rank: int, scale: float, rng: RngStream,
                 init_std: float = DEFAULT_INIT_STD) -> LoraAdapter:
    """Vanilla LoRA init: ``B = 0`` and Gaussian ``A``, so the effective delta is zero."""
    layers = []
    for i, (d, k) in enumerate(shapes):
        if rank < 1 or rank > min(d, k):
            raise ConfigError(f"rank {rank} invalid for layer {i} of shape {(d, k)}")
        a = gaussian_matrix(rng.child("lora-a", i), rank, k, init_std)
        layers.append(LoraLayer(np.zeros((d, rank)), a))
    return LoraAdapter(tuple(layers), scale)


def effective_delta(adapter: LoraAdapter) -> list[Matrix]:
    return [adapter.scale * matmul(layer.b, layer.a) for layer in adapter.layers]


def merge(base: BaseWeights, stack: DeltaStack, current: LoraAdapter | None = None) -> list[Matrix]:
    """``W_0 + sum of stacked deltas + current adapter delta``, per layer."""
    merged = [np.array(w) for w in base.weights]
    for t, entry in enumerate(stack.entries):
        if len(entry) != len(merged):
            raise DimensionError(f"stack entry {t} has {len(entry)} layers, base has {len(merged)}")
        for i, d in enumerate(entry):
            if d.shape != merged[i].shape:
                raise DimensionError(f"stack entry {t} layer {i}: {d.shape} vs {merged[i].shape}")
            merged[i] = merged[i] + d
    if current is not None:
        if current.shapes != base.shapes:
            raise DimensionError(f"adapter shapes {current.shapes} vs base {base.shapes}")
        for i, d in enumerate(effective_delta(current)):
            merged[i] = merged[i] + d
    return merged


def adapter_norm_sq(adapter: LoraAdapter) -> float:
    return float(sum(frobenius_inner(d, d) for d in effective_delta(adapter)))


def freeze_delta(adapter: LoraAdapter, stack: DeltaStack) -> DeltaStack:
    return DeltaStack(stack.entries + (tuple(effective_delta(adapter)),))
