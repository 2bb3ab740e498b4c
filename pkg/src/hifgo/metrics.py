"""Continual-learning scores and second-order interference diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import InputError, Matrix, NumericError, layers_inner
from .models import Batch, ModelSpec, forward_loss, grad_wrt_merged
from .tasks import TaskStream


@dataclass
class PerfMatrix:
    """``r[t, j]``: score on task ``j`` after finishing task ``t`` (0-based; NaN = not run)."""

    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise InputError(f"performance matrix must be square, got shape {r.shape}")
        populated = r[~np.isnan(r)]
        if np.any((populated < 0) | (populated > 100)):
            raise InputError("scores must lie in [0, 100]")
        self.r = r

    @classmethod
    def empty(cls, n: int) -> "PerfMatrix":
        return cls(np.full((n, n), np.nan))

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def to_rows(self) -> list[list[float | None]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.r]

    @classmethod
    def from_rows(cls, rows) -> "PerfMatrix":
        return cls(np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=np.float64))


def _row(pm: PerfMatrix, t: int, upto: int) -> np.ndarray:
    vals = pm.r[t, :upto]
    if np.any(np.isnan(vals)):
        raise InputError(f"row {t + 1} of the performance matrix is not populated")
    return vals


def last(pm: PerfMatrix) -> float:
    return float(np.mean(_row(pm, pm.n - 1, pm.n)))


def avg(pm: PerfMatrix) -> float:
    """Mean over checkpoints ``t`` of the mean score on the ``t`` tasks seen so far."""
    return float(np.mean([np.mean(_row(pm, t, t + 1)) for t in range(pm.n)]))


def avg_all(pm: PerfMatrix) -> float:
    """Alternative reading: mean over every checkpoint of the mean over all tasks."""
    return float(np.mean([np.mean(_row(pm, t, pm.n)) for t in range(pm.n)]))


def imd(pm: PerfMatrix) -> list[float]:
    diag = np.diag(pm.r)
    if np.any(np.isnan(diag)):
        raise InputError("diagonal of the performance matrix is not populated")
    return [float(v) for v in diag]


def bwt(pm: PerfMatrix) -> float:
    n = pm.n
    if n < 2:
        raise InputError("backward transfer is undefined for a single task")
    final = _row(pm, n - 1, n)
    return float(np.mean([final[j] - pm.r[j, j] for j in range(n - 1)]))


def summary(pm: PerfMatrix, complete: bool = True) -> dict:
    """Metric block for reports. ``complete=False`` for runs that only fill the last row."""
    out: dict = {"n": pm.n, "last": last(pm)}
    if complete:
        out.update(avg=avg(pm), avg_all=avg_all(pm), imd=imd(pm),
                   bwt=bwt(pm) if pm.n > 1 else None)
    else:
        out.update(avg=None, avg_all=None, imd=None, bwt=None)
    return out


def lossless_residual(spec: ModelSpec, weights1: Sequence[Matrix], delta2: Sequence[Matrix],
                      batch: Batch, biases=None) -> float:
    """Second-order Taylor remainder ``|L(w + d) - L(w) - <grad L(w), d>|``."""
    rep = grad_wrt_merged(spec, weights1, batch, biases)
    moved = forward_loss(spec, [w + d for w, d in zip(weights1, delta2)], batch, biases)
    return abs(moved - rep.loss - layers_inner(rep.grads, delta2))


def quad_interference(h_source: np.ndarray | Callable[[np.ndarray], np.ndarray], delta) -> float:
    """``delta^T H delta`` for a flattened increment, from a matrix or a Hessian-vector callable."""
    delta = np.asarray(delta, dtype=np.float64).ravel()
    if not np.any(delta):
        raise InputError("interference of a zero increment is undefined")
    hv = h_source(delta) if callable(h_source) else np.asarray(h_source) @ delta
    return float(delta @ np.asarray(hv).ravel())


@dataclass
class IdentityCheck:
    rel_error: float
    gpwc: np.ndarray
    h_v: np.ndarray
    degenerate: bool


def _interp_optimum(h_a, b_a, h_b, b_b, lam: float) -> np.ndarray:
    # minimizer of L_A + lam (L_B - L_A) for quadratics with normal equations H theta = b
    return np.linalg.solve(h_a + lam * (h_b - h_a), b_a + lam * (b_b - b_a))


def _tangent(h_a, b_a, h_b, b_b, step: float = 1e-30) -> np.ndarray:
    """``d theta*(lam) / d lam`` at 0 by a complex-step derivative along the optimum path.

    The path is a rational function of ``lam``, so ``Im f(i h) / h`` has no
    subtractive cancellation and is accurate to machine precision.
    """
    return _interp_optimum(h_a.astype(complex), b_a.astype(complex), h_b, b_b, 1j * step).imag / step


def gpwc_identity_check(pair: TaskStream, at=None, empirical: bool = False) -> IdentityCheck:
    """Compare the cross-task gradient ``g`` at task A's optimum with ``H_A v``.

    ``v`` is minus the tangent of the optimum path of ``L_A + lam (L_B - L_A)``,
    obtained numerically from the path rather than from ``g``. Population form
    uses the prescribed matrices; empirical form uses the train-set statistics.
    """
    task_a, task_b = pair[0], pair[1]
    if task_a.hessian is None or task_b.hessian is None:
        raise InputError("identity check needs a quadratic pair with ground-truth fields")
    theta = np.asarray(task_a.theta_star if at is None else at, dtype=np.float64).ravel()
    if empirical:
        stats = []
        for t in (task_a, task_b):
            x, y = t.train.inputs, t.train.targets.ravel()
            stats.append((x.T @ x / len(x), x.T @ y / len(x)))
        (h_a, b_a), (h_b, b_b) = stats
        spec = ModelSpec("linear-regression", ((1, theta.size),))
        g = grad_wrt_merged(spec, [theta.reshape(1, -1)], task_b.train).grads[0].ravel()
    else:
        h_a, h_b = task_a.hessian, task_b.hessian
        b_a, b_b = h_a @ task_a.theta_star.ravel(), h_b @ task_b.theta_star.ravel()
        g = h_b @ (theta - task_b.theta_star.ravel())
    if np.linalg.cond(h_a) > 1e12:
        raise NumericError("task A Hessian is numerically singular")
    v = -_tangent(h_a, b_a, h_b, b_b)
    hv = h_a @ v
    scale = max(np.linalg.norm(hv), np.linalg.norm(g))
    if scale <= 1e-14:
        return IdentityCheck(0.0, g, hv, True)
    return IdentityCheck(float(np.linalg.norm(g - hv) / np.linalg.norm(hv)) if np.linalg.norm(hv) > 0
                         else float("inf"), g, hv, False)
