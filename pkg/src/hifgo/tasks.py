"""Synthetic task streams, CSV ingestion and the stage-1 / stage-2 subset protocol."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import ConfigError, DimensionError, InputError, Matrix, RngStream
from .models import Batch


class ParseError(InputError):
    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    train: Batch
    eval: Batch
    loss: str
    theta_star: Matrix | None = None  # population optimum, quadratic tasks only
    hessian: Matrix | None = None  # population Hessian, quadratic tasks only


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[TaskSpec, ...]
    seed: int
    generator: str = ""
    params: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        ids = [t.task_id for t in self.tasks]
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"task ids must run 1..N, got {ids}")

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i: int) -> TaskSpec:
        return self.tasks[i]


@dataclass(frozen=True)
class SubsetPlan:
    """``d1`` is always the full train set; ``d2`` is a seeded uniform subset."""

    rho: float = 0.1
    count: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.count is None and not 0 < self.rho <= 1:
            raise ConfigError(f"subset fraction must lie in (0, 1], got {self.rho}")
        if self.count is not None and self.count < 1:
            raise ConfigError(f"subset count must be positive, got {self.count}")


def rotation_2d(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def ring_means(classes: int, dim: int, angle: float, radius: float) -> np.ndarray:
    """Class means evenly spaced on a circle in the first coordinate plane, rotated by ``angle``."""
    base = 2 * np.pi * np.arange(classes) / classes + angle
    means = np.zeros((classes, dim))
    means[:, 0] = radius * np.cos(base)
    means[:, 1] = radius * np.sin(base)
    return means


def gen_rotated_gaussians(n_tasks: int, classes: int = 4, dim: int = 8, step: float = np.pi / 3,
                          samples: int = 2000, noise_std: float = 0.5, seed: int = 0,
                          radius: float = 2.0) -> TaskStream:
    if n_tasks < 1 or classes < 2 or dim < 2 or samples < 5:
        raise ConfigError(
            f"invalid stream sizes: n_tasks={n_tasks}, classes={classes}, dim={dim}, samples={samples}")
    if noise_std < 0 or radius <= 0:
        raise ConfigError("noise_std must be >= 0 and radius > 0")
    root = RngStream(seed).child("rotated-gaussians")
    n_train = int(round(0.8 * samples))
    tasks = []
    for i in range(1, n_tasks + 1):
        means = ring_means(classes, dim, (i - 1) * step, radius)
        gen = root.child(i).generator()
        labels = np.arange(samples) % classes
        x = means[labels] + noise_std * gen.standard_normal((samples, dim))
        perm = gen.permutation(samples)
        tr, ev = perm[:n_train], perm[n_train:]
        tasks.append(TaskSpec(i, Batch(x[tr], labels[tr]), Batch(x[ev], labels[ev]), "cross-entropy"))
    params = (("n_tasks", n_tasks), ("classes", classes), ("dim", dim), ("step", step),
              ("samples", samples), ("noise_std", noise_std), ("radius", radius))
    return TaskStream(tuple(tasks), seed, "rotated-gaussians", params)


def _check_spd(h: Matrix, name: str) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {h.shape}")
    if not np.allclose(h, h.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise ConfigError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(h)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} is not positive definite") from None


def gen_quadratic_pair(theta_a, theta_b, hessian_a: Matrix, hessian_b: Matrix, samples: int = 2000,
                       noise_std: float = 0.1, seed: int = 0) -> TaskStream:
    """Two linear-regression tasks whose population optima and Hessians are prescribed.

    Inputs are drawn as ``x ~ N(0, H)`` so that the mse Hessian ``E[x x^T]`` equals ``H``.
    Targets are ``y = theta . x + noise``. Eval sets have a quarter of the train size.
    """
    if samples < 1 or noise_std < 0:
        raise ConfigError("samples must be positive and noise_std non-negative")
    thetas = [np.asarray(theta_a, dtype=np.float64).ravel(), np.asarray(theta_b, dtype=np.float64).ravel()]
    hs = [np.asarray(hessian_a, dtype=np.float64), np.asarray(hessian_b, dtype=np.float64)]
    dim = thetas[0].shape[0]
    if thetas[1].shape[0] != dim:
        raise DimensionError("optima must have equal length")
    root = RngStream(seed).child("quadratic-pair")
    n_eval = max(1, samples // 4)
    tasks = []
    for i, (theta, h) in enumerate(zip(thetas, hs), start=1):
        if h.shape != (dim, dim):
            raise DimensionError(f"hessian {i} has shape {h.shape}, expected {(dim, dim)}")
        chol = _check_spd(h, f"hessian_{'ab'[i - 1]}")

        def draw(n, key):
            gen = root.child(i, key).generator()
            x = gen.standard_normal((n, dim)) @ chol.T
            y = x @ theta + noise_std * gen.standard_normal(n)
            return Batch(x, y.reshape(-1, 1))

        tasks.append(TaskSpec(i, draw(samples, "train"), draw(n_eval, "eval"), "mse",
                              theta.reshape(1, -1).copy(), h.copy()))
    params = (("theta_a", tuple(thetas[0])), ("theta_b", tuple(thetas[1])), ("samples", samples),
              ("noise_std", noise_std))
    return TaskStream(tuple(tasks), seed, "quadratic-pair", params)


def random_spd(rng: RngStream, dim: int, cond: float = 10.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues log-spaced in ``[1/sqrt(cond), sqrt(cond)]``."""
    gen = rng.generator()
    q, _ = np.linalg.qr(gen.standard_normal((dim, dim)))
    eig = np.logspace(-0.5, 0.5, dim) ** math.log10(cond) if dim > 1 else np.ones(1)
    h = (q * eig) @ q.T
    return 0.5 * (h + h.T)


def load_csv(path: str | Path, label_column: str, classification: bool = True) -> Batch:
    """Read a header-first numeric CSV; every non-label column is a feature, in file order."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        if label_column not in header:
            raise InputError(f"{path}: missing label column {label_column!r}")
        li = header.index(label_column)
        feats, labels = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}",
                                 row_no, "")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"{path}: non-numeric value {cell!r} at row {row_no}, column {col!r}",
                                     row_no, col) from None
            labels.append(vals[li])
            feats.append(vals[:li] + vals[li + 1:])
    if not feats:
        raise InputError(f"{path}: no data rows (empty dataset)")
    y = np.asarray(labels)
    if classification:
        if not np.all(y == np.round(y)):
            raise InputError(f"{path}: label column {label_column!r} is not integer-valued")
        y = y.astype(np.int64)
    return Batch(np.asarray(feats, dtype=np.float64).reshape(len(feats), -1), y)


def subset_indices(n: int, plan: SubsetPlan, rng: RngStream | None = None) -> np.ndarray:
    size = plan.count if plan.count is not None else math.ceil(plan.rho * n - 1e-9)
    if size < 1:
        raise ConfigError("stage-2 subset would be empty")
    if size > n:
        raise ConfigError(f"subset count {size} exceeds dataset size {n}")
    rng = rng or RngStream(plan.seed)
    idx = rng.child("d2").generator().choice(n, size=size, replace=False)
    return np.sort(idx)


def select_subsets(task: TaskSpec, plan: SubsetPlan, rng: RngStream | None = None) -> tuple[Batch, Batch]:
    idx = subset_indices(len(task.train), plan, rng)
    return task.train, task.train.take(idx)


def quadratic_population_gradient(theta_at: Matrix, task: TaskSpec) -> np.ndarray:
    """Population mse gradient ``H (theta - theta*)`` as a row matrix."""
    if task.hessian is None or task.theta_star is None:
        raise ConfigError("task has no ground-truth quadratic fields")
    return (np.asarray(theta_at) - task.theta_star) @ task.hessian


def quadratic_population_loss(theta_at: Matrix, task: TaskSpec, noise_std: float = 0.0) -> float:
    """Population excess loss ``0.5 (theta - theta*)^T H (theta - theta*)`` plus the noise floor."""
    d = (np.asarray(theta_at) - task.theta_star).ravel()
    return 0.5 * float(d @ task.hessian @ d) + 0.5 * noise_std ** 2


def stream_batches(tasks: Sequence[TaskSpec]) -> Batch:
    return Batch.concat([t.train for t in tasks])
