"""Gradient snapshots and the orthogonality / norm penalties on LoRA updates.

Every penalty returns ``(value, factor_grads)`` where ``factor_grads`` holds one
``(dB, dA)`` pair per adapter layer. Penalties act on the adapter's effective
delta ``dW = s B A``; gradients reach the factors through the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import ConfigError, DimensionError, InputError, Matrix, frobenius_inner
from .lora import BaseWeights, DeltaStack, LoraAdapter, effective_delta, merge
from .models import Batch, ModelSpec, factor_grads, grad_wrt_merged

DEFAULT_LAMBDA1 = 2e-2
DEFAULT_LAMBDA2 = 1e-2
PENALTIES = ("abs", "square")


@dataclass(frozen=True)
class RegWeights:
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"regularization weights must be >= 0, got {self.lambda1}, {self.lambda2}")


@dataclass(frozen=True)
class GpwcSnapshot:
    """Frozen gradient of a previous merged model, taken on some dataset.

    ``task_id`` is the task being regularized; ``source`` is the number of
    completed tasks whose deltas form the merged model the gradient was taken at.
    """

    task_id: int
    source: int
    grads: tuple[Matrix, ...]
    samples: int

    def __post_init__(self):
        grads = []
        for g in self.grads:
            g = np.array(g, dtype=np.float64, copy=True)
            g.setflags(write=False)
            grads.append(g)
        object.__setattr__(self, "grads", tuple(grads))

    def norms(self) -> list[float]:
        return [float(np.linalg.norm(g)) for g in self.grads]

    def normalized(self) -> "GpwcSnapshot":
        grads = [g / max(np.linalg.norm(g), 1e-12) for g in self.grads]
        return GpwcSnapshot(self.task_id, self.source, tuple(grads), self.samples)


def compute_gpwc(spec: ModelSpec, base: BaseWeights, prefix: DeltaStack, d2: Batch,
                 task_id: int | None = None) -> GpwcSnapshot:
    """Mean gradient of the merged model ``W_0 + sum(prefix)`` on the current task's ``d2``."""
    if d2 is None or len(d2) == 0:
        raise InputError("GPWC needs a nonempty current-task subset")
    weights = merge(base, prefix)
    rep = grad_wrt_merged(spec, weights, d2, base.biases)
    tid = task_id if task_id is not None else len(prefix) + 1
    return GpwcSnapshot(tid, len(prefix), tuple(rep.grads), len(d2))


def _signed_terms(directions: Sequence[Sequence[Matrix]], adapter: LoraAdapter, penalty: str):
    if penalty not in PENALTIES:
        raise ConfigError(f"unknown orth penalty {penalty!r}; known: {', '.join(PENALTIES)}")
    deltas = effective_delta(adapter)
    total = 0.0
    dw = [np.zeros_like(d) for d in deltas]
    for dirs in directions:
        if len(dirs) != len(deltas):
            raise DimensionError(f"{len(dirs)} direction layers vs {len(deltas)} adapter layers")
        for i, (g, d) in enumerate(zip(dirs, deltas)):
            if g.shape != d.shape:
                raise DimensionError(f"layer {i}: direction {g.shape} vs delta {d.shape}")
            t = frobenius_inner(g, d)
            if penalty == "abs":
                total += abs(t)
                dw[i] += np.sign(t) * g
            else:
                total += t * t
                dw[i] += 2.0 * t * g
    return total, factor_grads(adapter, dw)


def orth_loss_full(snapshots: Sequence[GpwcSnapshot], adapter: LoraAdapter,
                   penalty: str = "abs") -> tuple[float, list[tuple[Matrix, Matrix]]]:
    """Sum over snapshots and layers of ``|<G_j, dW>|`` (or its square)."""
    return _signed_terms([s.grads for s in snapshots], adapter, penalty)


def orth_loss_proxy(snapshot: GpwcSnapshot, adapter: LoraAdapter,
                    penalty: str = "abs") -> tuple[float, list[tuple[Matrix, Matrix]]]:
    """Single-snapshot form against the most recent merged model."""
    return _signed_terms([snapshot.grads], adapter, penalty)


def param_orth_loss(stack: DeltaStack, adapter: LoraAdapter,
                    penalty: str = "abs") -> tuple[float, list[tuple[Matrix, Matrix]]]:
    """Orthogonality to the previous tasks' parameter deltas instead of gradients."""
    return _signed_terms(stack.entries, adapter, penalty)


def norm_loss(adapter: LoraAdapter) -> tuple[float, list[tuple[Matrix, Matrix]]]:
    deltas = effective_delta(adapter)
    value = float(sum(frobenius_inner(d, d) for d in deltas))
    return value, factor_grads(adapter, [2.0 * d for d in deltas])


def history_snapshots(spec: ModelSpec, base: BaseWeights, stack: DeltaStack,
                      retained: Sequence[Batch | None], task_id: int) -> list[GpwcSnapshot]:
    """Gradients of each previous merged model on that previous task's own retained data."""
    snaps = []
    for j in range(1, len(stack) + 1):
        data = retained[j - 1] if j - 1 < len(retained) else None
        if data is None:
            raise ConfigError(f"history-gradient arm needs retained data for task {j}")
        rep = grad_wrt_merged(spec, merge(base, stack.prefix(j)), data, base.biases)
        snaps.append(GpwcSnapshot(task_id, j, tuple(rep.grads), len(data)))
    return snaps


def history_grad_orth_loss(snapshots: Sequence[GpwcSnapshot], adapter: LoraAdapter,
                           penalty: str = "abs") -> tuple[float, list[tuple[Matrix, Matrix]]]:
    return _signed_terms([s.grads for s in snapshots], adapter, penalty)
