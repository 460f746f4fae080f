"""Run configuration: dataclass defaults, flat ``key=value`` files, then flag overrides."""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from bnn_evolve.bitcore import FixedProb
from bnn_evolve.errors import ConfigError
from bnn_evolve.evolvers import ALGORITHMS, EvolverConfig, ScheduleConfig
from bnn_evolve.objective import LabelCodec
from bnn_evolve.utils import default_workers, parse_bool, parse_int_list, parse_rational, parse_schedule

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "MNIST_DATA_DIR"

# Best configuration reported for the counting-error trainer: 5 layers, 100 bits per label.
DEFAULT_SIZES = (784, 100, 100, 100, 100, 1000)


@dataclass
class RunConfig:
    data_dir: Optional[str] = None
    algorithm: str = "counting"
    sizes: list = field(default_factory=lambda: list(DEFAULT_SIZES))
    classes: int = 10
    bits_per_label: int = 100
    flip_prob: FixedProb = field(default_factory=lambda: FixedProb.from_ratio(1, 100))
    children: int = 8
    elite_size: int = 4
    lam: FixedProb = field(default_factory=lambda: FixedProb.from_ratio(1, 4))
    batch_size: int = 64
    keep_parent: bool = False
    schedule: Optional[ScheduleConfig] = None
    seed: int = 0
    time_budget_secs: Optional[int] = 1800
    step_budget: Optional[int] = None
    evaluation_budget: Optional[int] = None
    eval_every: int = 100
    fitness_subset_size: int = 2000
    binarize_threshold: int = 128
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    metrics_out: str = "logs/metrics.csv"
    model_out: Optional[str] = "logs/model.bnn"
    log_dir: Optional[str] = "logs"
    workers: int = field(default_factory=default_workers)
    deterministic_metrics: bool = False
    min_depth: int = 2
    max_depth: int = 5

    @property
    def codec(self) -> LabelCodec:
        return LabelCodec(self.classes, self.bits_per_label)

    @property
    def depth_bounds(self) -> tuple[int, int]:
        return (self.min_depth, self.max_depth)

    def evolver_config(self, p: Optional[FixedProb] = None) -> EvolverConfig:
        return EvolverConfig(
            algorithm=self.algorithm,
            p=p if p is not None else self.flip_prob,
            children=self.children,
            elite_size=self.elite_size,
            lam=self.lam,
            batch_size=self.batch_size,
            keep_parent=self.keep_parent,
            schedule=self.schedule,
            workers=self.workers,
        )

    def validate(self) -> "RunConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}")
        if self.time_budget_secs is None and self.step_budget is None:
            raise ConfigError("set time_budget_secs or step_budget (or both)")
        for name in ("time_budget_secs", "step_budget", "evaluation_budget", "train_limit", "test_limit"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        for name in ("children", "elite_size", "batch_size", "eval_every", "fitness_subset_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.binarize_threshold <= 255:
            raise ConfigError(f"binarize_threshold must be a byte, got {self.binarize_threshold}")
        if len(self.sizes) < 2 or any(s < 1 for s in self.sizes):
            raise ConfigError(f"invalid layer widths {self.sizes}")
        if self.min_depth < 1 or self.min_depth > self.max_depth:
            raise ConfigError(f"invalid depth bounds {self.min_depth}..{self.max_depth}")
        try:
            codec = self.codec
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.sizes[-1] != codec.width:
            raise ConfigError(
                f"last width {self.sizes[-1]} must equal classes x bits_per_label = {codec.width}"
            )
        return self


def _optional(parser: Callable) -> Callable:
    def parse(text):
        if str(text).strip().lower() in ("", "none", "off"):
            return None
        return parser(text)

    return parse


def _int(text) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise ConfigError(f"invalid integer {text!r}") from None


def _str(text) -> str:
    return str(text).strip()


def _algorithm(text) -> str:
    value = str(text).strip().lower()
    if value not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {value!r}, expected one of {ALGORITHMS}")
    return value


# config key -> (RunConfig attribute, parser)
FIELDS = {
    "data_dir": ("data_dir", _optional(_str)),
    "algorithm": ("algorithm", _algorithm),
    "sizes": ("sizes", parse_int_list),
    "layers": ("sizes", parse_int_list),
    "classes": ("classes", _int),
    "bits_per_label": ("bits_per_label", _int),
    "flip_prob": ("flip_prob", parse_rational),
    "children": ("children", _int),
    "elite_size": ("elite_size", _int),
    "lambda": ("lam", parse_rational),
    "batch_size": ("batch_size", _int),
    "keep_parent": ("keep_parent", parse_bool),
    "schedule": ("schedule", _optional(parse_schedule)),
    "seed": ("seed", _int),
    "time_budget_secs": ("time_budget_secs", _optional(_int)),
    "time_budget": ("time_budget_secs", _optional(_int)),
    "step_budget": ("step_budget", _optional(_int)),
    "evaluation_budget": ("evaluation_budget", _optional(_int)),
    "eval_every": ("eval_every", _int),
    "fitness_subset_size": ("fitness_subset_size", _int),
    "binarize_threshold": ("binarize_threshold", _int),
    "train_limit": ("train_limit", _optional(_int)),
    "test_limit": ("test_limit", _optional(_int)),
    "metrics_out": ("metrics_out", _str),
    "model_out": ("model_out", _optional(_str)),
    "log_dir": ("log_dir", _optional(_str)),
    "workers": ("workers", _int),
    "deterministic_metrics": ("deterministic_metrics", parse_bool),
    "min_depth": ("min_depth", _int),
    "max_depth": ("max_depth", _int),
}


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment. Returns raw string values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def apply_values(config: RunConfig, values: dict) -> RunConfig:
    changes = {}
    for key, value in values.items():
        if value is None:
            continue
        if key not in FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        attr, parser = FIELDS[key]
        changes[attr] = parser(value)
    return dataclasses.replace(config, **changes)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults <- file at ``path`` <- ``overrides``; data_dir falls back to $MNIST_DATA_DIR."""
    config = RunConfig()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        config = apply_values(config, parse_config_text(text))
    if overrides:
        config = apply_values(config, overrides)
    if not config.data_dir and os.environ.get(DATA_DIR_ENV):
        config = dataclasses.replace(config, data_dir=os.environ[DATA_DIR_ENV])
        logger.info("[Config] data_dir taken from $%s: %s", DATA_DIR_ENV, config.data_dir)
    return config.validate()


def describe(config: RunConfig) -> str:
    """One ``key=value`` line per field, readable back by :func:`parse_config_text`."""
    lines = []
    for key, (attr, _) in FIELDS.items():
        if key in ("layers", "time_budget"):
            continue
        value = getattr(config, attr)
        if isinstance(value, FixedProb):
            value = f"{value.threshold}/{1 << 32}"
        elif isinstance(value, ScheduleConfig):
            value = f"{value.p_min.threshold}/{1 << 32},{value.p_max.threshold}/{1 << 32},{value.period}"
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = "none"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
