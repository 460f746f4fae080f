import logging
import os
from typing import Optional

import psutil

from bnn_evolve.bitcore import FixedProb
from bnn_evolve.errors import ConfigError
from bnn_evolve.evolvers import ScheduleConfig

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def parse_rational(text: str) -> FixedProb:
    """``NUM/DEN`` (or a bare 0/1) -> FixedProb ``floor(NUM * 2**32 / DEN)``, clamped."""
    text = str(text).strip()
    num_text, sep, den_text = text.partition("/")
    try:
        num = int(num_text)
        den = int(den_text) if sep else 1
    except ValueError:
        raise ConfigError(f"invalid rational {text!r}, expected NUM/DEN") from None
    if den <= 0:
        raise ConfigError(f"invalid rational {text!r}: denominator must be positive")
    if num < 0 or num > den:
        raise ConfigError(f"invalid rational {text!r}: must lie in [0, 1]")
    return FixedProb.from_ratio(num, den)


def parse_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"invalid integer list {text!r}") from None
    if not values:
        raise ConfigError("empty integer list")
    return values


def parse_schedule(text: str) -> ScheduleConfig:
    """``p_min,p_max,T`` with rational bounds, e.g. ``1/1000,1/50,500``."""
    parts = [part.strip() for part in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"invalid schedule {text!r}, expected p_min,p_max,T")
    try:
        period = int(parts[2])
    except ValueError:
        raise ConfigError(f"invalid schedule period {parts[2]!r}") from None
    return ScheduleConfig(parse_rational(parts[0]), parse_rational(parts[1]), period)


def parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean {text!r}")


def format_ppm(ppm: Optional[int]) -> str:
    """600000 -> '60.0000%' without going through floats."""
    if ppm is None:
        return "n/a"
    return f"{ppm // 10000}.{ppm % 10000:04d}%"


def default_workers() -> int:
    return max(1, psutil.cpu_count(logical=False) or 1)


def setup_logging(log_dir: Optional[str] = None, level: int = logging.INFO) -> None:
    """Console logging plus ``<log_dir>/bnn_evolve.log`` when a directory is given."""
    root = logging.getLogger("bnn_evolve")
    root.setLevel(level)
    root.propagate = False
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(console)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        fh = logging.FileHandler(os.path.join(log_dir, "bnn_evolve.log"), mode="w")
        fh.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(fh)
