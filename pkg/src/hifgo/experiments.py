"""Glue between configs, training runs and JSON/CSV reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import RunConfig
from .linalg import ConfigError, RngStream
from .metrics import PerfMatrix, summary
from .models import ModelSpec, init_base
from .regularizers import RegWeights
from .tasks import (
    SubsetPlan,
    TaskSpec,
    TaskStream,
    gen_quadratic_pair,
    gen_rotated_gaussians,
    load_csv,
)
from .trainer import TRACE_COLUMNS, ModelSetup, OptimConfig, RunArtifacts, Strategy, run_continual

SCHEMA_VERSION = 1
TRACE_SIDECAR_THRESHOLD = 10_000


def library_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def build_stream(cfg: RunConfig, base_dir: Path | None = None) -> TaskStream:
    s = cfg.stream
    if s.generator == "rotated-gaussians":
        return gen_rotated_gaussians(s.n_tasks, s.classes, s.dim, s.step, s.samples, s.noise_std,
                                     cfg.seed, s.radius)
    if s.generator == "quadratic-pair":
        return gen_quadratic_pair(s.theta_a, s.theta_b, np.array(s.hessian_a), np.array(s.hessian_b),
                                  s.samples, s.noise_std, cfg.seed)
    base_dir = base_dir or Path(".")
    tasks = []
    for i, entry in enumerate(s.tasks, start=1):
        if "train" not in entry or "eval" not in entry:
            raise ConfigError(f"stream.tasks[{i - 1}]: needs 'train' and 'eval' paths")
        train = load_csv(base_dir / entry["train"], s.label_column)
        ev = load_csv(base_dir / entry["eval"], s.label_column)
        tasks.append(TaskSpec(i, train, ev, "cross-entropy"))
    return TaskStream(tuple(tasks), cfg.seed, "csv", ())


def build_setup(cfg: RunConfig, stream: TaskStream) -> ModelSetup:
    m = cfg.model
    first = stream[0].train
    d_in = first.inputs.shape[1]
    if cfg.stream.generator == "quadratic-pair":
        kind, d_out = "linear-regression", 1
    else:
        kind = m.kind
        if kind == "linear-regression":
            raise ConfigError("model.kind: linear-regression needs a regression stream")
        labels = np.concatenate([t.train.targets for t in stream.tasks])
        d_out = max(cfg.stream.classes, int(labels.max()) + 1)
    spec = ModelSpec.build(kind, d_in, d_out, hidden=m.hidden)
    base = init_base(spec, RngStream(cfg.seed).child("base"), m.base_std)
    return ModelSetup(spec, base, m.rank, m.scale, m.init_std)


def build_strategy(cfg: RunConfig) -> Strategy:
    st = cfg.strategy
    return Strategy(st.name, RegWeights(cfg.reg.lambda1, cfg.reg.lambda2), st.two_stage, st.stage2_init,
                    st.orth_penalty, st.normalize_gpwc, st.stage1_base)


def build_optim(cfg: RunConfig) -> OptimConfig:
    o = cfg.optim
    return OptimConfig(o.method, o.lr, o.momentum, o.epochs1, o.epochs2, o.batch_size)


def execute(cfg: RunConfig, base_dir: Path | None = None) -> RunArtifacts:
    stream = build_stream(cfg, base_dir)
    setup = build_setup(cfg, stream)
    plan = SubsetPlan(cfg.subset.rho, cfg.subset.count, cfg.seed)
    return run_continual(stream, setup, build_strategy(cfg), build_optim(cfg), plan, cfg.seed)


def traces_csv(art: RunArtifacts) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in art.traces:
        w.writerow([row[0], row[1], row[2]] + [repr(float(v)) for v in row[3:]])
    return buf.getvalue()


def build_report(cfg: RunConfig, art: RunArtifacts, sidecar: str | None = None) -> dict:
    traces: dict | list
    if sidecar is not None:
        traces = {"sidecar": sidecar, "columns": list(TRACE_COLUMNS), "rows": len(art.traces)}
    else:
        traces = {"columns": list(TRACE_COLUMNS), "rows": [list(r) for r in art.traces]}
    per_task = {str(t): sorted(set(c)) for t, c in sorted(art.orth_sets_per_step.items())}
    return {
        "schema_version": SCHEMA_VERSION,
        "library_version": library_version(),
        "config": cfg.to_dict(),
        "strategy": art.strategy,
        "metrics": summary(art.perf, art.complete),
        "perf_matrix": art.perf.to_rows(),
        "traces": traces,
        "snapshot_norms": art.snapshot_norms,
        "accounting": {
            "orth_sets_per_step": per_task,
            "orth_steps": {str(t): len(c) for t, c in sorted(art.orth_sets_per_step.items())},
            "inner_product_sets": art.inner_products,
        },
        "timing": art.wall_time,
    }


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(cfg: RunConfig, art: RunArtifacts, out: Path) -> dict:
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = None
    if len(art.traces) > TRACE_SIDECAR_THRESHOLD:
        side = out.with_suffix(".traces.csv")
        side.write_text(traces_csv(art), encoding="utf-8")
        sidecar = side.name
    report = build_report(cfg, art, sidecar)
    out.write_text(dumps(report), encoding="utf-8")
    return report


def metric_block(report: dict) -> str:
    """Canonical bytes of the deterministic part of a report (everything but timing)."""
    stable = {k: v for k, v in report.items() if k != "timing"}
    return json.dumps(stable, sort_keys=True)


def with_overrides(cfg: RunConfig, *, seed: int | None = None, strategy: str | None = None,
                   lambda1: float | None = None, lambda2: float | None = None) -> RunConfig:
    new = replace(cfg, stream=replace(cfg.stream), model=replace(cfg.model), strategy=replace(cfg.strategy),
                  reg=replace(cfg.reg), optim=replace(cfg.optim), subset=replace(cfg.subset))
    if seed is not None:
        new.seed = seed
    if strategy is not None:
        new.strategy.name = strategy
    if lambda1 is not None:
        new.reg.lambda1 = lambda1
    if lambda2 is not None:
        new.reg.lambda2 = lambda2
    return new


def perf_from_report(report: dict) -> PerfMatrix:
    return PerfMatrix.from_rows(report["perf_matrix"])
