"""Command-line front end: run, compare, sweep, toy, report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .experiments import SCHEMA_VERSION, execute, perf_from_report, with_overrides, write_report
from .linalg import ConfigError, InputError, NumericError
from .metrics import summary
from .toy import run_toy, write_toy
from .trainer import STRATEGIES

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "HIFGO_OUT_DIR"
SWEEP_COLUMNS = ("lambda1", "lambda2", "last", "avg", "bwt", "mean_imd")


class UsageError(ConfigError):
    pass


def _out_path(cfg: RunConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    out = Path(cfg.output)
    env = os.environ.get(OUT_ENV)
    if env and not out.is_absolute():
        return Path(env) / out
    return out


def _one_run(cfg: RunConfig, base_dir: Path, out: Path) -> dict:
    """Worker body; top-level so process pools can pickle it."""
    return write_report(cfg, execute(cfg, base_dir), out)


def _map(jobs: int, fn, items: list) -> list:
    # results come back in submission order, whatever the completion order
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def _load(path: str, seed: int | None) -> tuple[RunConfig, Path]:
    cfg = load_config(path)
    if seed is not None:
        cfg = with_overrides(cfg, seed=seed)
    return cfg, Path(path).resolve().parent


def cmd_run(config: str, seed: int | None = None, out: str | None = None) -> int:
    cfg, base = _load(config, seed)
    dest = _out_path(cfg, out)
    report = _one_run(cfg, base, dest)
    m = report["metrics"]
    print(f"{cfg.strategy.name}: last={m['last']:.4f} -> {dest}")
    return EXIT_OK


def _parse_strategies(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [n for n in names if n not in STRATEGIES]
    if unknown:
        raise UsageError(f"unknown strategy {unknown[0]!r}; known: {', '.join(STRATEGIES)}")
    if len(names) < 2:
        raise UsageError("compare needs at least two strategies")
    return names


def cmd_compare(config: str, strategies: list[str], seed: int | None = None, out: str | None = None,
                jobs: int = 1, fmt: str = "md") -> int:
    cfg, base = _load(config, seed)
    dest = _out_path(cfg, out)
    items = []
    for name in strategies:
        c = with_overrides(cfg, strategy=name)
        items.append((c, base, dest.with_name(f"{dest.stem}.{name}{dest.suffix or '.json'}")))
    reports = _map(jobs, _one_run, items)
    table = render(reports, fmt)
    (dest.with_name(f"{dest.stem}.compare.{fmt}")).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def _sweep_point(cfg: RunConfig, base: Path) -> list:
    rep = summary(execute(cfg, base).perf)
    return [cfg.reg.lambda1, cfg.reg.lambda2, rep["last"], rep["avg"], rep["bwt"],
            float(np.mean(rep["imd"]))]


def sweep_rows(cfg: RunConfig, base: Path, lambda1: list[float], lambda2: list[float], jobs: int = 1) -> list:
    if not lambda1 or not lambda2:
        raise UsageError("sweep grid must be nonempty")
    if any(v < 0 for v in lambda1 + lambda2):
        raise UsageError("sweep lambdas must be non-negative")
    items = [(with_overrides(cfg, lambda1=a, lambda2=b), base) for a in lambda1 for b in lambda2]
    return _map(jobs, _sweep_point, items)


def monotonicity(rows: list) -> list[dict]:
    """Per-λ1 check along the λ2 axis: BWT non-decreasing, mean Imd non-increasing."""
    out = []
    for l1 in sorted({r[0] for r in rows}):
        line = sorted((r for r in rows if r[0] == l1), key=lambda r: r[1])
        bwt = [r[4] for r in line]
        imd = [r[5] for r in line]
        out.append({
            "lambda1": l1,
            "lambda2": [r[1] for r in line],
            "bwt_non_decreasing": all(b2 >= b1 for b1, b2 in zip(bwt, bwt[1:])),
            "imd_non_increasing": all(m2 <= m1 for m1, m2 in zip(imd, imd[1:])),
        })
    return out


def sweep_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return buf.getvalue()


def cmd_sweep(config: str, lambda1: list[float], lambda2: list[float], seed: int | None = None,
              out: str | None = None, jobs: int = 1) -> int:
    cfg, base = _load(config, seed)
    rows = sweep_rows(cfg, base, lambda1, lambda2, jobs)
    dest = _out_path(cfg, out)
    dest = dest if dest.suffix == ".csv" else dest.with_suffix(".sweep.csv")
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(sweep_csv(rows), encoding="utf-8")
    mono = monotonicity(rows)
    dest.with_suffix(".summary.json").write_text(json.dumps(mono, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    for m in mono:
        print(f"lambda1={m['lambda1']}: bwt non-decreasing in lambda2={m['bwt_non_decreasing']}, "
              f"mean imd non-increasing={m['imd_non_increasing']}")
    return EXIT_OK


def cmd_toy(out_dir: str, seed: int = 0) -> int:
    runs, result = run_toy(seed)
    paths = write_toy(Path(out_dir), runs, result)
    print(f"identity check relative error {result['identity_check']['rel_error']:.3e}")
    for p in paths:
        print(p)
    return EXIT_OK


def _check_report(path: str) -> dict:
    try:
        rep = json.loads(Path(path).read_text(encoding="utf-8"))
        if rep.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {rep.get('schema_version')!r}")
        perf_from_report(rep)
        rep["strategy"], rep["metrics"]["last"]  # noqa: B018
    except OSError:
        raise
    except (ValueError, KeyError, TypeError, InputError, AttributeError) as exc:
        raise UsageError(f"{path}: malformed report ({exc})") from None
    return rep


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def _groups(reports: list[dict]) -> dict[int, list[dict]]:
    groups: dict[int, list[dict]] = {}
    for rep in reports:
        groups.setdefault(len(rep["perf_matrix"]), []).append(rep)
    return dict(sorted(groups.items()))


def render_md(reports: list[dict]) -> str:
    parts = []
    for n, reps in _groups(reports).items():
        head = ["Method", ""] + [f"T{j}" for j in range(1, n + 1)] + ["Average", "BWT"]
        lines = [f"### {n} tasks", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for rep in reps:
            pm = perf_from_report(rep)
            m = rep["metrics"]
            if m.get("imd") is not None:
                lines.append("| " + " | ".join([rep["strategy"], "Imd"] + [_fmt(v) for v in m["imd"]]
                                                + [_fmt(float(np.mean(m["imd"]))), ""]) + " |")
            final = [None if np.isnan(v) else float(v) for v in pm.r[-1]]
            lines.append("| " + " | ".join([rep["strategy"], "Last"] + [_fmt(v) for v in final]
                                            + [_fmt(m["last"]), _fmt(m.get("bwt"))]) + " |")
        parts.append("\n".join(lines) + "\n")
    return "\n".join(parts)


def render_csv(reports: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for n, reps in _groups(reports).items():
        w.writerow(["strategy", "n", "last", "avg", "bwt", "mean_imd"]
                   + [f"imd_{j}" for j in range(1, n + 1)] + [f"last_{j}" for j in range(1, n + 1)])
        for rep in reps:
            m = rep["metrics"]
            pm = perf_from_report(rep)
            imd = m.get("imd") or [None] * n
            w.writerow([rep["strategy"], n] + [_cell(m["last"]), _cell(m.get("avg")), _cell(m.get("bwt")),
                                                _cell(float(np.mean(imd)) if m.get("imd") else None)]
                       + [_cell(v) for v in imd] + [_cell(None if np.isnan(v) else float(v)) for v in pm.r[-1]])
    return buf.getvalue()


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def render(reports: list[dict], fmt: str = "md") -> str:
    if fmt not in ("md", "csv"):
        raise UsageError(f"unknown format {fmt!r}; use md or csv")
    return render_md(reports) if fmt == "md" else render_csv(reports)


def cmd_report(paths: list[str], fmt: str = "md", out: str | None = None) -> int:
    if not paths:
        raise UsageError("report needs at least one file")
    text = render([_check_report(p) for p in paths], fmt)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hifgo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one configured experiment")
    r.add_argument("config")
    c = sub.add_parser("compare", help="paired strategies on one stream")
    c.add_argument("config")
    c.add_argument("--strategies", required=True)
    c.add_argument("--format", default="md", choices=("md", "csv"))
    s = sub.add_parser("sweep", help="lambda grid sweep")
    s.add_argument("config")
    s.add_argument("--lambda1", required=True, help="comma-separated values")
    s.add_argument("--lambda2", required=True, help="comma-separated values")
    for q in (r, c, s):
        q.add_argument("--seed", type=int)
        q.add_argument("--out")
    for q in (c, s):
        q.add_argument("--jobs", type=int, default=1)
    t = sub.add_parser("toy", help="two-parameter demo trajectories")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    rp = sub.add_parser("report", help="tables from report files")
    rp.add_argument("files", nargs="+")
    rp.add_argument("--format", default="md", choices=("md", "csv"))
    rp.add_argument("--out")
    return p


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.out)
    if args.command == "compare":
        return cmd_compare(args.config, _parse_strategies(args.strategies), args.seed, args.out,
                           args.jobs, args.format)
    if args.command == "sweep":
        return cmd_sweep(args.config, _floats(args.lambda1), _floats(args.lambda2), args.seed, args.out,
                         args.jobs)
    if args.command == "toy":
        return cmd_toy(args.out, args.seed)
    return cmd_report(args.files, args.format, args.out)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return dispatch(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
