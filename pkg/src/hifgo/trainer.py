"""Two-stage continual fine-tuning of LoRA adapters and the baseline strategies."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .linalg import ConfigError, Matrix, NumericError, RngStream, flatten
from .lora import (
    DEFAULT_INIT_STD,
    BaseWeights,
    DeltaStack,
    LoraAdapter,
    adapter_norm_sq,
    freeze_delta,
    init_adapter,
    merge,
)
from .metrics import PerfMatrix
from .models import Batch, ModelSpec, evaluate, grad_wrt_factors
from .regularizers import (
    GpwcSnapshot,
    RegWeights,
    compute_gpwc,
    history_grad_orth_loss,
    history_snapshots,
    norm_loss,
    orth_loss_full,
    orth_loss_proxy,
    param_orth_loss,
)
from .tasks import SubsetPlan, TaskStream, select_subsets, stream_batches

STRATEGIES = ("hifgo-full", "hifgo-proxy", "seq-ft", "param-orth", "hist-grad-orth", "multi-task")
STAGE2_INITS = ("copy", "fresh")
STAGE1_BASES = ("w0", "merged")
TRACE_COLUMNS = ("task", "stage", "step", "ce", "orth", "norm", "total")


@dataclass(frozen=True)
class OptimConfig:
    method: str = "sgd-momentum"
    lr: float = 0.05
    momentum: float = 0.9
    epochs1: int = 1
    epochs2: int = 3
    batch_size: int = 16

    def __post_init__(self):
        if self.method not in ("sgd", "sgd-momentum"):
            raise ConfigError(f"unknown optimizer {self.method!r}")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError(f"learning rate must be a finite non-negative number, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs1 < 0 or self.epochs2 < 0:
            raise ConfigError("epoch counts must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")

    @property
    def beta(self) -> float:
        return self.momentum if self.method == "sgd-momentum" else 0.0


@dataclass(frozen=True)
class Strategy:
    name: str
    reg: RegWeights = field(default_factory=RegWeights)
    two_stage: bool = True
    stage2_init: str = "copy"
    orth_penalty: str = "abs"
    normalize_gpwc: bool = False
    stage1_base: str = "w0"

    def __post_init__(self):
        if self.stage1_base not in STAGE1_BASES:
            raise ConfigError(f"stage1_base must be one of {STAGE1_BASES}, got {self.stage1_base!r}")
        if self.name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.name!r}; known: {', '.join(STRATEGIES)}")
        if self.stage2_init not in STAGE2_INITS:
            raise ConfigError(f"stage2_init must be one of {STAGE2_INITS}, got {self.stage2_init!r}")
        if self.name == "seq-ft":
            object.__setattr__(self, "reg", RegWeights(0.0, 0.0))
            object.__setattr__(self, "two_stage", False)

    @property
    def uses_gpwc(self) -> bool:
        return self.name in ("hifgo-full", "hifgo-proxy")


@dataclass(frozen=True)
class ModelSetup:
    spec: ModelSpec
    base: BaseWeights
    rank: int = 4
    scale: float = 1.0
    init_std: float = DEFAULT_INIT_STD

    def fresh_adapter(self, rng: RngStream) -> LoraAdapter:
        return init_adapter(self.spec.shapes, self.rank, self.scale, rng, self.init_std)


@dataclass(frozen=True)
class OptimState:
    velocity: tuple[tuple[Matrix, Matrix], ...] | None = None


def sgd_step(adapter: LoraAdapter, grads: Sequence[tuple[Matrix, Matrix]], state: OptimState,
             lr: float, beta: float = 0.0) -> tuple[LoraAdapter, OptimState]:
    """Heavy-ball step: ``v <- beta v + g``, ``x <- x - lr v`` (plain SGD when ``beta = 0``)."""
    vel = state.velocity or tuple((np.zeros_like(l.b), np.zeros_like(l.a)) for l in adapter.layers)
    new_factors, new_vel = [], []
    for layer, (gb, ga), (vb, va) in zip(adapter.layers, grads, vel):
        vb = beta * vb + gb
        va = beta * va + ga
        new_factors.append((layer.b - lr * vb, layer.a - lr * va))
        new_vel.append((vb, va))
    return adapter.with_factors(new_factors), OptimState(tuple(new_vel))


@dataclass
class RunArtifacts:
    strategy: str
    stack: DeltaStack
    stage1_adapters: list[LoraAdapter]
    stage2_adapters: list[LoraAdapter]
    perf: PerfMatrix
    traces: list[tuple]
    snapshot_norms: list[dict]
    orth_sets_per_step: dict[int, list[int]]
    inner_products: int
    complete: bool = True
    wall_time: dict = field(default_factory=dict)

    def fingerprint(self) -> str:
        """Hash of everything except the strategy label and timings."""
        h = hashlib.sha256()
        for entry in self.stack.entries:
            for m in entry:
                h.update(m.tobytes())
        for adapters in (self.stage1_adapters, self.stage2_adapters):
            for a in adapters:
                for layer in a.layers:
                    h.update(layer.b.tobytes())
                    h.update(layer.a.tobytes())
        h.update(self.perf.r.tobytes())
        h.update(repr(self.traces).encode())
        h.update(repr(self.snapshot_norms).encode())
        h.update(repr(sorted(self.orth_sets_per_step.items())).encode())
        h.update(str(self.inner_products).encode())
        return h.hexdigest()


class _Objective:
    """Stage-2 regularizer: penalty callable plus its per-step inner-product-set count."""

    def __init__(self, fn: Callable[[LoraAdapter], tuple[float, list]] | None, sets: int):
        self.fn = fn
        self.sets = sets


def _train(setup: ModelSetup, stack: DeltaStack, adapter: LoraAdapter, data: Batch, epochs: int,
           optim: OptimConfig, rng: RngStream, task: int, stage: int, reg: RegWeights,
           objective: _Objective | None, traces: list, counts: list | None,
           observer: Callable | None = None) -> LoraAdapter:
    state = OptimState()
    n = len(data)
    bs = optim.batch_size
    step = 0
    for epoch in range(epochs):
        perm = rng.child("shuffle", task, stage, epoch).generator().permutation(n)
        for start in range(0, n, bs):
            batch = data.take(np.sort(perm[start:start + bs]))
            try:
                rep = grad_wrt_factors(setup.spec, setup.base, stack, adapter, batch)
            except NumericError as exc:
                raise NumericError(f"task {task} stage {stage} step {step}: {exc}") from exc
            grads = rep.factor_grads
            orth_v = norm_v = 0.0
            if objective is not None and objective.fn is not None and reg.lambda1 > 0:
                orth_v, og = objective.fn(adapter)
                grads = [(gb + reg.lambda1 * ob, ga + reg.lambda1 * oa)
                         for (gb, ga), (ob, oa) in zip(grads, og)]
                if counts is not None:
                    counts.append(objective.sets)
            if reg.lambda2 > 0:
                norm_v, ng = norm_loss(adapter)
                grads = [(gb + reg.lambda2 * nb, ga + reg.lambda2 * na)
                         for (gb, ga), (nb, na) in zip(grads, ng)]
            total = rep.loss + reg.lambda1 * orth_v + reg.lambda2 * norm_v
            if not math.isfinite(total):
                raise NumericError(f"task {task} stage {stage} step {step}: non-finite loss {total}")
            traces.append((task, stage, step, rep.loss, orth_v, norm_v, total))
            adapter, state = sgd_step(adapter, grads, state, optim.lr, optim.beta)
            step += 1
            if observer is not None:
                observer(task, stage, step, merge(setup.base, stack, adapter))
    return adapter


def stage1_finetune(setup: ModelSetup, adapter: LoraAdapter, d1: Batch, optim: OptimConfig,
                    rng: RngStream, task: int = 1, traces: list | None = None,
                    stack: DeltaStack | None = None, observer: Callable | None = None) -> LoraAdapter:
    """Unregularized training at ``W_0 + adapter``, or at ``W_0 + sum(stack) + adapter`` if given."""
    return _train(setup, stack or DeltaStack(), adapter, d1, optim.epochs1, optim, rng, task, 1,
                  RegWeights(0.0, 0.0), None, traces if traces is not None else [], None, observer)


def stage2_finetune(setup: ModelSetup, stack: DeltaStack, adapter: LoraAdapter, d2: Batch,
                    snapshots: Sequence[GpwcSnapshot] | None, strategy: Strategy, optim: OptimConfig,
                    rng: RngStream, task: int = 1, traces: list | None = None,
                    counts: list | None = None, epochs: int | None = None, stage: int = 2,
                    retained: Sequence[Batch] | None = None, observer: Callable | None = None) -> LoraAdapter:
    """Regularized training at ``W_0 + sum(stack) + adapter``."""
    objective = _objective(setup, stack, snapshots, strategy, task, retained)
    return _train(setup, stack, adapter, d2, optim.epochs2 if epochs is None else epochs, optim, rng,
                  task, stage, strategy.reg, objective, traces if traces is not None else [], counts, observer)


def _objective(setup, stack, snapshots, strategy: Strategy, task: int, retained) -> _Objective | None:
    if strategy.reg.lambda1 == 0 or task == 1 or strategy.name in ("seq-ft", "multi-task"):
        return None
    pen = strategy.orth_penalty
    if strategy.name == "param-orth":
        return _Objective(lambda a: param_orth_loss(stack, a, pen), len(stack))
    if not snapshots:
        raise ConfigError(f"strategy {strategy.name} at task {task} needs snapshots when lambda1 > 0")
    snaps = list(snapshots)
    if strategy.name == "hifgo-proxy":
        return _Objective(lambda a: orth_loss_proxy(snaps[-1], a, pen), 1)
    if strategy.name == "hist-grad-orth":
        return _Objective(lambda a: history_grad_orth_loss(snaps, a, pen), len(snaps))
    return _Objective(lambda a: orth_loss_full(snaps, a, pen), len(snaps))


def _capture(setup: ModelSetup, stack: DeltaStack, d2: Batch, strategy: Strategy, task: int,
             retained: Sequence[Batch], norms_log: list) -> list[GpwcSnapshot]:
    if task == 1 or strategy.reg.lambda1 == 0 or strategy.name in ("seq-ft", "multi-task", "param-orth"):
        return []
    if strategy.name == "hist-grad-orth":
        snaps = history_snapshots(setup.spec, setup.base, stack, retained, task)
        for s in snaps:
            norms_log.append({"task": task, "source": s.source, "kind": "history", "norms": s.norms()})
        # same-step GPWC norms, logged only as the reference scale for the history gradients
        for j in range(1, task):
            ref = compute_gpwc(setup.spec, setup.base, stack.prefix(j), d2, task)
            norms_log.append({"task": task, "source": j, "kind": "gpwc-reference", "norms": ref.norms()})
    else:
        sources = range(1, task) if strategy.name == "hifgo-full" else [task - 1]
        snaps = [compute_gpwc(setup.spec, setup.base, stack.prefix(j), d2, task) for j in sources]
        for s in snaps:
            norms_log.append({"task": task, "source": s.source, "kind": "gpwc", "norms": s.norms()})
    if strategy.normalize_gpwc:
        snaps = [s.normalized() for s in snaps]
    return snaps


def _eval_row(setup: ModelSetup, stack: DeltaStack, stream: TaskStream) -> list[float]:
    weights = merge(setup.base, stack)
    return [evaluate(setup.spec, weights, t.eval, setup.base.biases) for t in stream.tasks]


def run_continual(stream: TaskStream, setup: ModelSetup, strategy: Strategy, optim: OptimConfig,
                  plan: SubsetPlan, seed: int, observer: Callable | None = None) -> RunArtifacts:
    """Sequential training over the stream; fills one performance row per finished task.

    ``observer(task, stage, step, merged_weights)`` is called after every optimizer step.
    """
    if strategy.name == "multi-task":
        return run_multitask(stream, setup, optim, seed)
    rng = RngStream(seed)
    n = len(stream)
    stack = DeltaStack()
    perf = PerfMatrix.empty(n)
    traces: list = []
    norms_log: list = []
    per_step: dict[int, list[int]] = {}
    s1_adapters: list[LoraAdapter] = []
    s2_adapters: list[LoraAdapter] = []
    wall: dict = {"stage2": []}
    t_start = time.perf_counter()
    chained: LoraAdapter | None = None
    retained: list[Batch] = []
    for i, task in enumerate(stream.tasks, start=1):
        d1, d2 = select_subsets(task, replace(plan, seed=seed), rng.child("subset", i))
        counts: list[int] = []
        if strategy.two_stage:
            if strategy.stage1_base == "merged":
                # stage 1 continues from the merged previous model with a fresh adapter
                a1 = stage1_finetune(setup, setup.fresh_adapter(rng.child("adapter", i)), d1, optim, rng,
                                     i, traces, stack, observer)
            else:
                start = chained if chained is not None else setup.fresh_adapter(rng.child("adapter", 1))
                a1 = stage1_finetune(setup, start, d1, optim, rng, i, traces, observer=observer)
            chained = a1
            s1_adapters.append(a1)
            snaps = _capture(setup, stack, d2, strategy, i, retained, norms_log)
            a2_init = a1 if strategy.stage2_init == "copy" else setup.fresh_adapter(rng.child("adapter", i))
            t0 = time.perf_counter()
            a2 = stage2_finetune(setup, stack, a2_init, d2, snaps, strategy, optim, rng, i, traces, counts,
                                 retained=retained, observer=observer)
            wall["stage2"].append(time.perf_counter() - t0)
        else:
            # constrained-only training: one stage on the full task data from the merged previous model
            snaps = _capture(setup, stack, d2, strategy, i, retained, norms_log)
            t0 = time.perf_counter()
            a2 = stage2_finetune(setup, stack, setup.fresh_adapter(rng.child("adapter", i)), d1, snaps,
                                 strategy, optim, rng, i, traces, counts, epochs=optim.epochs1, stage=1,
                                 retained=retained, observer=observer)
            wall["stage2"].append(time.perf_counter() - t0)
        s2_adapters.append(a2)
        per_step[i] = counts
        stack = freeze_delta(a2, stack)
        retained.append(d2)
        perf.r[i - 1] = _eval_row(setup, stack, stream)
    wall["total"] = time.perf_counter() - t_start
    inner = sum(sum(c) for c in per_step.values())
    return RunArtifacts(strategy.name, stack, s1_adapters, s2_adapters, perf, traces, norms_log,
                        per_step, inner, True, wall)


def run_multitask(stream: TaskStream, setup: ModelSetup, optim: OptimConfig, seed: int) -> RunArtifacts:
    """One adapter trained on the union of all train sets; only the final row is filled."""
    rng = RngStream(seed)
    t_start = time.perf_counter()
    traces: list = []
    union = stream_batches(stream.tasks)
    adapter = stage2_finetune(setup, DeltaStack(), setup.fresh_adapter(rng.child("adapter", 1)), union,
                              None, Strategy("multi-task", RegWeights(0.0, 0.0)), optim, rng, 1, traces,
                              epochs=optim.epochs1, stage=1)
    stack = freeze_delta(adapter, DeltaStack())
    perf = PerfMatrix.empty(len(stream))
    perf.r[-1] = _eval_row(setup, stack, stream)
    return RunArtifacts("multi-task", stack, [], [adapter], perf, traces, [], {1: []}, 0,
                        len(stream) == 1, {"total": time.perf_counter() - t_start})


def merged_delta_vector(art: RunArtifacts, task: int) -> np.ndarray:
    """Flattened increment contributed by ``task`` (1-based) to the merged weights."""
    return flatten(art.stack.entries[task - 1])


def adapter_norm(art: RunArtifacts, task: int) -> float:
    return math.sqrt(adapter_norm_sq(art.stage2_adapters[task - 1]))
