"""Run configuration: an INI file with one section per concern, flags on top.

Precedence, lowest to highest: dataclass defaults, the ``--config`` file,
command-line flags.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .backtest import CONVENTIONS, MODES
from .errors import ConfigError
from .losses import DEFAULT_ALPHAS, DEFAULT_SPANS, MomentumSpan
from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class Paths:
    prices: str = ""  # may contain "{stock}"
    news: str = ""
    industry_map: str = ""
    topics: tuple = ()
    out: str = "out"


@dataclass(frozen=True)
class Run:
    stocks: tuple = ()
    split_ratio: float = 0.7
    ties: str = "zero"


@dataclass(frozen=True)
class BacktestConfig:
    mode: str = "long-flat"
    convention: str = "standard"


@dataclass(frozen=True)
class AnalyticsConfig:
    windows: int = 4
    aggregation: str = "mean"


@dataclass(frozen=True)
class GridConfig:
    alphas: tuple = DEFAULT_ALPHAS
    spans: tuple = DEFAULT_SPANS
    epochs: int | None = None  # None: use training.epochs
    validation_ratio: float = 0.8


@dataclass(frozen=True)
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    run: Run = field(default_factory=Run)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)
    grid: GridConfig = field(default_factory=GridConfig)

    def validate(self):
        if not 0 < self.run.split_ratio < 1:
            raise ConfigError(f"run.split_ratio must lie in (0, 1), got {self.run.split_ratio}")
        if self.run.ties not in ("zero", "drop"):
            raise ConfigError(f"run.ties must be zero or drop, got {self.run.ties!r}")
        if self.backtest.mode not in MODES:
            raise ConfigError(f"backtest.mode must be one of {MODES}")
        if self.backtest.convention not in CONVENTIONS:
            raise ConfigError(f"backtest.convention must be one of {CONVENTIONS}")
        if self.analytics.windows < 1:
            raise ConfigError("analytics.windows must be >= 1")
        if self.analytics.aggregation not in ("mean", "sum"):
            raise ConfigError("analytics.aggregation must be mean or sum")
        if not self.grid.alphas or not self.grid.spans:
            raise ConfigError("grid.alphas and grid.spans must be nonempty")
        for s in self.grid.spans:
            MomentumSpan.parse(s)
        if not 0 < self.grid.validation_ratio < 1:
            raise ConfigError("grid.validation_ratio must lie in (0, 1)")
        return self

    def as_dict(self):
        return asdict(self)


SECTIONS = {"paths": Paths, "run": Run, "model": ModelConfig, "training": TrainConfig,
            "backtest": BacktestConfig, "analytics": AnalyticsConfig, "grid": GridConfig}


def _convert(section, name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, tuple):
            items = tuple(x.strip() for x in raw.split(",") if x.strip())
            if default and all(isinstance(x, float) for x in default):
                return tuple(float(x) for x in items)
            return items
        if isinstance(default, int) or (default is None and name == "epochs"):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {name}: cannot parse {raw!r}") from None
    return raw


def _build(section, cls, values):
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for name, raw in values.items():
        if name not in known:
            raise ConfigError(f"[{section}] unknown key {name!r}")
        kwargs[name] = _convert(section, name, raw, getattr(defaults, name))
    try:
        return replace(defaults, **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def load_config(path=None, overrides=None):
    """Parse an INI file (optional) and apply ``overrides`` as {section: {key: str}}."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        try:
            with path.open(encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for section, kv in (overrides or {}).items():
        if not parser.has_section(section):
            parser.add_section(section)
        for k, v in kv.items():
            parser.set(section, k, str(v))
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    parts = {name: _build(name, cls, dict(parser[name]) if parser.has_section(name) else {})
             for name, cls in SECTIONS.items()}
    return RunConfig(**parts).validate()
