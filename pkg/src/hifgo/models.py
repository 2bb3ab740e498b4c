"""Small differentiable predictors with analytic gradients.

Layer weights follow the ``(out, in)`` convention, so a layer computes
``X @ W.T + b`` on a row-major batch ``X`` of shape ``(n, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import (
    ConfigError,
    DimensionError,
    InputError,
    Matrix,
    NumericError,
    RngStream,
    check_finite,
    gaussian_matrix,
    layers_norm,
)
from .lora import BaseWeights, DeltaStack, LoraAdapter, merge

KINDS = ("linear-regression", "linear-softmax", "mlp-1h")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    shapes: tuple[tuple[int, int], ...]
    activation: str = "identity"
    loss: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; known: {', '.join(KINDS)}")
        object.__setattr__(self, "shapes", tuple(tuple(int(v) for v in s) for s in self.shapes))
        loss = self.loss or ("mse" if self.kind == "linear-regression" else "cross-entropy")
        object.__setattr__(self, "loss", loss)
        if (self.kind == "linear-regression") != (loss == "mse"):
            raise ConfigError(f"model kind {self.kind} cannot use loss {loss}")
        if loss not in ("mse", "cross-entropy"):
            raise ConfigError(f"unknown loss {loss!r}")
        expected_layers = 2 if self.kind == "mlp-1h" else 1
        if len(self.shapes) != expected_layers:
            raise ConfigError(f"{self.kind} needs {expected_layers} layer shape(s), got {len(self.shapes)}")
        for (o, _), (_, i) in zip(self.shapes, self.shapes[1:]):
            if o != i:
                raise ConfigError(f"layer shapes do not chain: {self.shapes}")
        if self.activation not in ("identity", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.kind != "mlp-1h" and self.activation != "identity":
            raise ConfigError("activation only applies to mlp-1h")

    @classmethod
    def build(cls, kind: str, d_in: int, d_out: int, hidden: int = 32,
              activation: str | None = None) -> "ModelSpec":
        if kind == "mlp-1h":
            return cls(kind, ((hidden, d_in), (d_out, hidden)), activation or "tanh")
        return cls(kind, ((d_out, d_in),))

    @property
    def is_classifier(self) -> bool:
        return self.loss == "cross-entropy"

    @property
    def d_in(self) -> int:
        return self.shapes[0][1]

    @property
    def d_out(self) -> int:
        return self.shapes[-1][0]


@dataclass(frozen=True)
class Batch:
    """Inputs ``(n, d_in)`` with regression targets ``(n, d_out)`` or integer labels ``(n,)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InputError(f"batch inputs must be a nonempty 2-D array, got shape {x.shape}")
        y = np.asarray(self.targets)
        if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
            y = y.astype(np.int64)
            if np.any(y < 0):
                raise InputError("class indices must be non-negative")
        else:
            y = np.array(y, dtype=np.float64)
            if y.ndim == 1:
                y = y.reshape(-1, 1)
        if y.shape[0] != x.shape[0]:
            raise DimensionError(f"{x.shape[0]} inputs vs {y.shape[0]} targets")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def is_labels(self) -> bool:
        return self.targets.ndim == 1

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.inputs[idx], self.targets[idx])

    @staticmethod
    def concat(batches: Sequence["Batch"]) -> "Batch":
        return Batch(np.concatenate([b.inputs for b in batches]),
                     np.concatenate([b.targets for b in batches]))


@dataclass
class GradReport:
    loss: float
    grads: list[Matrix]
    factor_grads: list[tuple[Matrix, Matrix]] | None = field(default=None)


def init_base(spec: ModelSpec, rng: RngStream, std: float | None = None,
              with_bias: bool = True) -> BaseWeights:
    """Random "pretrained" weights: zero for linear kinds, scaled Gaussian for the mlp."""
    weights, biases = [], []
    for i, (o, k) in enumerate(spec.shapes):
        if spec.kind == "mlp-1h":
            s = std if std is not None else 1.0 / np.sqrt(k)
            weights.append(gaussian_matrix(rng.child("base-w", i), o, k, s))
            biases.append(gaussian_matrix(rng.child("base-b", i), 1, o, 0.1).ravel()
                          if with_bias and i == 0 else (np.zeros(o) if with_bias else None))
        else:
            s = std if std is not None else 0.0
            weights.append(gaussian_matrix(rng.child("base-w", i), o, k, s))
            biases.append(np.zeros(o) if with_bias else None)
    return BaseWeights(tuple(weights), tuple(biases))


def _check(spec: ModelSpec, weights: Sequence[Matrix], batch: Batch) -> None:
    if len(weights) != len(spec.shapes):
        raise DimensionError(f"{len(weights)} weight matrices for {len(spec.shapes)} layers")
    for i, (w, s) in enumerate(zip(weights, spec.shapes)):
        if tuple(w.shape) != s:
            raise DimensionError(f"layer {i}: weight shape {tuple(w.shape)} vs spec {s}")
    if batch.inputs.shape[1] != spec.d_in:
        raise DimensionError(f"batch inputs have {batch.inputs.shape[1]} features, model expects {spec.d_in}")
    if spec.is_classifier:
        if not batch.is_labels:
            raise DimensionError("classification batch needs integer labels")
        if batch.targets.max() >= spec.d_out:
            raise InputError(f"class index {batch.targets.max()} >= class count {spec.d_out}")
    elif batch.is_labels or batch.targets.shape[1] != spec.d_out:
        raise DimensionError(f"regression targets must have {spec.d_out} columns")


def _bias(biases, i):
    if biases is None or i >= len(biases):
        return None
    return biases[i]


def _forward(spec: ModelSpec, weights: Sequence[Matrix], x: np.ndarray, biases=None):
    """Returns (output, hidden activations or None)."""
    if spec.kind == "mlp-1h":
        pre = x @ weights[0].T
        if _bias(biases, 0) is not None:
            pre = pre + biases[0]
        h = np.tanh(pre) if spec.activation == "tanh" else pre
        out = h @ weights[1].T
        if _bias(biases, 1) is not None:
            out = out + biases[1]
        return out, h
    out = x @ weights[0].T
    if _bias(biases, 0) is not None:
        out = out + biases[0]
    return out, None


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _loss_and_dout(spec: ModelSpec, out: np.ndarray, batch: Batch, need_grad: bool):
    n = len(batch)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite model output")
    if spec.loss == "mse":
        r = out - batch.targets
        loss = 0.5 * float(np.sum(r * r)) / n
        return loss, (r / n if need_grad else None)
    logp = _log_softmax(out)
    rows = np.arange(n)
    loss = -float(np.sum(logp[rows, batch.targets])) / n
    if not need_grad:
        return loss, None
    p = np.exp(logp)
    p[rows, batch.targets] -= 1.0
    return loss, p / n


def predict(spec: ModelSpec, weights: Sequence[Matrix], inputs: np.ndarray, biases=None) -> np.ndarray:
    out, _ = _forward(spec, weights, np.asarray(inputs, dtype=np.float64), biases)
    return out


def forward_loss(spec: ModelSpec, weights: Sequence[Matrix], batch: Batch, biases=None) -> float:
    """Batch-mean loss: ``0.5 * |Wx - y|^2`` for mse, negative log-softmax for cross-entropy."""
    _check(spec, weights, batch)
    out, _ = _forward(spec, weights, batch.inputs, biases)
    return _loss_and_dout(spec, out, batch, need_grad=False)[0]


def grad_wrt_merged(spec: ModelSpec, weights: Sequence[Matrix], batch: Batch, biases=None) -> GradReport:
    _check(spec, weights, batch)
    x = batch.inputs
    out, h = _forward(spec, weights, x, biases)
    loss, dout = _loss_and_dout(spec, out, batch, need_grad=True)
    if spec.kind == "mlp-1h":
        g2 = dout.T @ h
        dh = dout @ weights[1]
        dpre = dh * (1.0 - h * h) if spec.activation == "tanh" else dh
        g1 = dpre.T @ x
        grads = [g1, g2]
    else:
        grads = [dout.T @ x]
    for g in grads:
        check_finite(g, "gradient")
    return GradReport(loss, grads)


def factor_grads(adapter: LoraAdapter, merged_grads: Sequence[Matrix]) -> list[tuple[Matrix, Matrix]]:
    """Chain rule through ``dW = s B A``: ``dB = s G A^T``, ``dA = s B^T G``."""
    s = adapter.scale
    return [(s * (g @ layer.a.T), s * (layer.b.T @ g)) for layer, g in zip(adapter.layers, merged_grads)]


def grad_wrt_factors(spec: ModelSpec, base: BaseWeights, stack: DeltaStack, adapter: LoraAdapter,
                     batch: Batch) -> GradReport:
    weights = merge(base, stack, adapter)
    rep = grad_wrt_merged(spec, weights, batch, base.biases)
    rep.factor_grads = factor_grads(adapter, rep.grads)
    return rep


def hessian_vector(spec: ModelSpec, weights: Sequence[Matrix], batch: Batch, v: Sequence[Matrix],
                   biases=None) -> list[Matrix]:
    """Hessian of the batch loss applied to a per-layer direction ``v``.

    Exact for linear regression; central difference of analytic gradients otherwise.
    """
    vnorm = layers_norm(v)
    if not vnorm > 1e-10:
        raise InputError(f"hessian_vector needs a nonzero direction, got norm {vnorm:g}")
    _check(spec, weights, batch)
    if spec.kind == "linear-regression":
        x = batch.inputs
        return [v[0] @ (x.T @ x) / len(batch)]
    h = 1e-4 / vnorm
    gp = grad_wrt_merged(spec, [w + h * d for w, d in zip(weights, v)], batch, biases).grads
    gm = grad_wrt_merged(spec, [w - h * d for w, d in zip(weights, v)], batch, biases).grads
    out = [(a - b) / (2.0 * h) for a, b in zip(gp, gm)]
    for m in out:
        check_finite(m, "hessian-vector product")
    return out


def evaluate(spec: ModelSpec, weights: Sequence[Matrix], dataset: Batch, biases=None) -> float:
    """Score in [0, 100]: accuracy for classifiers, ``100 * exp(-mean loss)`` for regression."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    _check(spec, weights, dataset)
    out, _ = _forward(spec, weights, dataset.inputs, biases)
    if spec.is_classifier:
        pred = np.argmax(out, axis=1)
        return 100.0 * float(np.mean(pred == dataset.targets))
    loss = _loss_and_dout(spec, out, dataset, need_grad=False)[0]
    return 100.0 * float(np.exp(-loss))
