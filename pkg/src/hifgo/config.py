"""Run configuration: TOML or JSON files validated into plain dataclasses."""

from __future__ import annotations

import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .linalg import ConfigError
from .regularizers import DEFAULT_LAMBDA1, DEFAULT_LAMBDA2
from .trainer import STAGE1_BASES, STAGE2_INITS, STRATEGIES

GENERATORS = ("rotated-gaussians", "quadratic-pair", "csv")


class FieldError(ConfigError):
    """Validation failure carrying the dotted path of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class StreamConfig:
    generator: str = "rotated-gaussians"
    n_tasks: int = 3
    classes: int = 4
    dim: int = 8
    step: float = math.pi / 3
    samples: int = 2000
    noise_std: float = 0.5
    radius: float = 2.0
    theta_a: list[float] = field(default_factory=lambda: [1.0, 0.0])
    theta_b: list[float] = field(default_factory=lambda: [0.0, 1.0])
    hessian_a: list[list[float]] = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    hessian_b: list[list[float]] = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    label_column: str = "label"
    tasks: list[dict] = field(default_factory=list)  # csv: [{"train": path, "eval": path}, ...]


@dataclass
class ModelConfig:
    kind: str = "linear-softmax"
    hidden: int = 32
    rank: int = 4
    scale: float = 1.0
    init_std: float = 0.02
    base_std: float | None = None


@dataclass
class StrategyConfig:
    name: str = "hifgo-proxy"
    two_stage: bool = True
    stage2_init: str = "copy"
    stage1_base: str = "w0"
    orth_penalty: str = "abs"
    normalize_gpwc: bool = False


@dataclass
class RegConfig:
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2


@dataclass
class OptimSection:
    method: str = "sgd-momentum"
    lr: float = 0.05
    momentum: float = 0.9
    epochs1: int = 1
    epochs2: int = 3
    batch_size: int = 16


@dataclass
class SubsetConfig:
    rho: float = 0.1
    count: int | None = None


@dataclass
class RunConfig:
    seed: int
    stream: StreamConfig = field(default_factory=StreamConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    reg: RegConfig = field(default_factory=RegConfig)
    optim: OptimSection = field(default_factory=OptimSection)
    subset: SubsetConfig = field(default_factory=SubsetConfig)
    output: str = "report.json"

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "stream": StreamConfig,
    "model": ModelConfig,
    "strategy": StrategyConfig,
    "reg": RegConfig,
    "optim": OptimSection,
    "subset": SubsetConfig,
}


def _coerce(path: str, value: Any, default: Any, annotation: str) -> Any:
    if value is None and "None" in annotation:
        return None
    if "bool" in annotation:
        if not isinstance(value, bool):
            raise FieldError(path, f"expected a boolean, got {value!r}")
        return value
    if annotation.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise FieldError(path, f"expected an integer, got {value!r}")
        return value
    if annotation.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FieldError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise FieldError(path, "must be finite")
        return float(value)
    if annotation.startswith("str"):
        if not isinstance(value, str):
            raise FieldError(path, f"expected a string, got {value!r}")
        return value
    if annotation.startswith("list"):
        if not isinstance(value, list):
            raise FieldError(path, f"expected a list, got {value!r}")
        return value
    return value


def _section(name: str, cls, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise FieldError(name, "expected a table")
    fields = cls.__dataclass_fields__
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise FieldError(f"{name}.{unknown[0]}", "unknown field")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = _coerce(f"{name}.{key}", value, None, str(fields[key].type))
    return cls(**kwargs)


def validate(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise FieldError("<root>", "config must be a table")
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed", "output"})
    if unknown:
        raise FieldError(unknown[0], "unknown field")
    if "seed" not in raw:
        raise FieldError("seed", "required field missing")
    seed = _coerce("seed", raw["seed"], None, "int")
    if not 0 <= seed < 2**64:
        raise FieldError("seed", "must be an unsigned 64-bit integer")
    sections = {name: _section(name, cls, raw.get(name)) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(seed=seed, output=_coerce("output", raw.get("output", "report.json"), None, "str"),
                    **sections)
    _check_values(cfg)
    return cfg


def _check_values(cfg: RunConfig) -> None:
    s = cfg.stream
    if s.generator not in GENERATORS:
        raise FieldError("stream.generator", f"unknown generator {s.generator!r}; known: {', '.join(GENERATORS)}")
    if s.generator == "csv" and not s.tasks:
        raise FieldError("stream.tasks", "csv streams need at least one task")
    if s.n_tasks < 1:
        raise FieldError("stream.n_tasks", "must be >= 1")
    if cfg.strategy.name not in STRATEGIES:
        raise FieldError("strategy.name", f"unknown strategy {cfg.strategy.name!r}; known: {', '.join(STRATEGIES)}")
    if cfg.strategy.stage2_init not in STAGE2_INITS:
        raise FieldError("strategy.stage2_init", f"must be one of {', '.join(STAGE2_INITS)}")
    if cfg.strategy.stage1_base not in STAGE1_BASES:
        raise FieldError("strategy.stage1_base", f"must be one of {', '.join(STAGE1_BASES)}")
    if cfg.strategy.orth_penalty not in ("abs", "square"):
        raise FieldError("strategy.orth_penalty", "must be 'abs' or 'square'")
    for key in ("lambda1", "lambda2"):
        if getattr(cfg.reg, key) < 0:
            raise FieldError(f"reg.{key}", "must be non-negative")
    o = cfg.optim
    if o.method not in ("sgd", "sgd-momentum"):
        raise FieldError("optim.method", "must be 'sgd' or 'sgd-momentum'")
    if not o.lr > 0:
        raise FieldError("optim.lr", "must be positive")
    if o.batch_size < 1:
        raise FieldError("optim.batch_size", "must be >= 1")
    if not 0 <= o.momentum < 1:
        raise FieldError("optim.momentum", "must lie in [0, 1)")
    if o.epochs1 < 0 or o.epochs2 < 0:
        raise FieldError("optim.epochs1", "epoch counts must be non-negative")
    if cfg.subset.count is None and not 0 < cfg.subset.rho <= 1:
        raise FieldError("subset.rho", "must lie in (0, 1]")
    if cfg.subset.count is not None and cfg.subset.count < 1:
        raise FieldError("subset.count", "must be >= 1")
    if cfg.model.rank < 1:
        raise FieldError("model.rank", "must be >= 1")
    if not cfg.model.scale > 0:
        raise FieldError("model.scale", "must be positive")


def parse_text(text: str, suffix: str = ".toml") -> dict:
    if suffix == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a config; ``.json`` files are parsed as JSON, anything else as TOML."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = parse_text(text, path.suffix.lower())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise FieldError("<file>", f"cannot parse {path}: {exc}") from None
    return validate(raw)
