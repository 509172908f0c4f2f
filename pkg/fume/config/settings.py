"""fume/config/settings.py

Two layers of configuration:

* Environment settings (``Config`` and its subclasses) select logging level,
  log file and default data/run locations. ``FUME_ENV`` picks the class.
* Run configuration (``RunConfig``) is read from a flat ``key = value`` file,
  one pair per line, ``#`` starting a comment. Unknown keys are errors.
"""

import os
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Type, Union

import msgspec
from dotenv import load_dotenv

from fume.errors import ConfigError

# Load environment variables from the .env file(s)
load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    """Base configuration."""
    LOG_LEVEL = os.getenv('FUME_LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('FUME_LOG_FILE', '')
    DATA_ROOT = os.getenv('FUME_DATA_ROOT', 'data/synthgas')
    RUNS_ROOT = os.getenv('FUME_RUNS_ROOT', 'runs')


class DevelopmentConfig(Config):
    """Development-specific configuration."""
    LOG_LEVEL = os.getenv('FUME_LOG_LEVEL', 'DEBUG')


class TestingConfig(Config):
    """Testing-specific configuration."""
    LOG_LEVEL = os.getenv('FUME_LOG_LEVEL', 'WARNING')
    LOG_FILE = ''


class ProductionConfig(Config):
    """Production-specific configuration."""
    LOG_FILE = os.getenv('FUME_LOG_FILE', 'fume.log')


def get_settings(env: Optional[str] = None) -> Type[Config]:
    """Return the settings class for ``env`` (defaults to ``FUME_ENV``)."""
    env = env if env is not None else os.getenv("FUME_ENV", "production")
    if env == "development":
        return DevelopmentConfig
    if env == "testing":
        return TestingConfig
    return ProductionConfig


DEFAULT_COUNTS = "6.5:143,6.2:143,5.9:286,5.6:96,5.3:95,5.0:95"

_PRECISIONS = ("float32", "float64")


@dataclass
class RunConfig:
    """Flat run configuration shared by every CLI command."""
    seed: int = 0
    variant: str = "fume"
    dataset: str = field(default_factory=lambda: Config.DATA_ROOT)
    out_dir: str = field(default_factory=lambda: Config.RUNS_ROOT)

    # Synthetic data
    image_size: int = 64
    counts_per_ph: str = DEFAULT_COUNTS
    session_length: int = 20

    # Optimisation
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 20
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    augment: bool = True
    precision: str = "float32"
    prefetch: int = 2

    # Loss
    focal_gamma: float = 2.0
    lambda_cls: float = 0.5
    dice_smooth: float = 1.0

    # Evaluation and efficiency
    eval_batch_size: int = 16
    bench_size: int = 512
    bench_warmup: int = 100
    bench_iterations: int = 1000
    macs_size: int = 512

    def validate(self) -> "RunConfig":
        """Check value ranges; raises ConfigError naming the first bad key."""
        from fume.net.variants import ModelVariantConfig

        ModelVariantConfig.parse(self.variant)
        for key in ("image_size", "bench_size", "macs_size"):
            value = getattr(self, key)
            if value <= 0 or value % 32:
                raise ConfigError(f"{key} must be a positive multiple of 32, got {value}")
        for key in ("batch_size", "epochs", "eval_batch_size", "session_length", "bench_iterations"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.bench_warmup < 0 or self.prefetch < 0:
            raise ConfigError("bench_warmup and prefetch must be non-negative")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.weight_decay < 0 or self.focal_gamma < 0 or self.lambda_cls < 0:
            raise ConfigError("weight_decay, focal_gamma and lambda_cls must be non-negative")
        if self.dice_smooth <= 0:
            raise ConfigError(f"dice_smooth must be positive, got {self.dice_smooth}")
        if self.precision not in _PRECISIONS:
            raise ConfigError(f"precision must be one of {_PRECISIONS}, got {self.precision!r}")
        parse_counts(self.counts_per_ph)
        return self

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def parse_key_values(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse flat ``key = value`` text into a dict of raw strings."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _coerce(raw: Dict[str, str]) -> Dict[str, Any]:
    # msgspec's lax mode handles numbers, but bools need explicit words
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        if key == "augment":
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                out[key] = True
            elif lowered in ("0", "false", "no", "off"):
                out[key] = False
            else:
                raise ConfigError(f"augment must be a boolean, got {value!r}")
        else:
            out[key] = value
    return out


def load_run_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> RunConfig:
    """
    Load and validate a run configuration file.

    Args:
        path: Config file path; ``None`` gives the defaults
        overrides: Values applied after the file (e.g. CLI options)

    Returns:
        A validated RunConfig

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}")
        raw = _coerce(parse_key_values(text, source=str(path)))

    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = msgspec.convert(raw, RunConfig, strict=False)
    except msgspec.ValidationError as e:
        raise ConfigError(f"Invalid config value: {e}")

    logger.debug(f"Loaded run config from {path or 'defaults'}: {cfg}")
    return cfg.validate()


def parse_counts(spec: str) -> Dict[float, int]:
    """Parse ``"6.5:143,6.2:143"`` into ``{6.5: 143, 6.2: 143}``."""
    counts: Dict[float, int] = {}
    for item in spec.split(','):
        item = item.strip()
        if not item:
            continue
        try:
            ph, count = item.split(':')
            counts[float(ph)] = int(count)
        except ValueError:
            raise ConfigError(f"counts_per_ph entry must be 'ph:count', got {item!r}")
    if not counts:
        raise ConfigError("counts_per_ph is empty")
    return counts
