"""Run configuration for the command-line pipeline.

A run is described by a JSON document whose sections mirror the library's
configuration objects.  Missing keys take their defaults; unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .rpw import BilliardConfig
from .scatfid import WindowConfig
from .spectra import GridConfig, NoiseConfig, WidthConfig


@dataclass
class EnsembleOptions:
    n_positions: int = 300
    base: str = "goe"
    per_level_k: bool = False


@dataclass
class MCOptions:
    n_samples: int = 200_000
    n_shards: int = 4


@dataclass
class TimeOptions:
    """Time grid of the analytic and Monte Carlo curves: ``n_points`` on ``[0, span / lam]``."""

    n_points: int = 256
    span: float = 10.0


@dataclass
class FitOptions:
    gate: float = 0.5
    max_rounds: int = 3
    fit_span: float = 5.0


@dataclass
class RunConfig:
    billiard: BilliardConfig = field(default_factory=BilliardConfig)
    ensemble: EnsembleOptions = field(default_factory=EnsembleOptions)
    widths: WidthConfig = field(default_factory=lambda: WidthConfig(width=0.05, coupling=0.05 / 40))
    grid: GridConfig = field(default_factory=lambda: GridConfig(n_points=32768))
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(snr_db=40.0))
    window: WindowConfig = field(default_factory=lambda: WindowConfig(n_bands=32))
    mc: MCOptions = field(default_factory=MCOptions)
    times: TimeOptions = field(default_factory=TimeOptions)
    fit: FitOptions = field(default_factory=FitOptions)
    seed: int = 0
    output_dir: str = "out"
    compress_traces: bool = True

    def to_dict(self):
        d = asdict(self)
        d["billiard"]["shifts"] = list(d["billiard"]["shifts"])
        return d

    def hash(self):
        """Short sha256 of the canonical JSON form (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SECTIONS = {f.name: f for f in fields(RunConfig)}


def _check_keys(cls, data, where):
    """Check a section for unknown keys."""
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{where}: unknown key(s) {', '.join(unknown)}")


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ValueError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ValueError(f"unknown configuration key(s): {', '.join(unknown)}")
    defaults = RunConfig()
    kwargs = {}
    for name, value in data.items():
        default = getattr(defaults, name)
        if hasattr(default, "__dataclass_fields__"):
            _check_keys(type(default), value, name)
            # the billiard area is derived from the sides unless given
            merged = value if name == "billiard" else {**asdict(default), **value}
            kwargs[name] = type(default)(**merged)
        else:
            kwargs[name] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ValueError(str(exc)) from None


def load_config(path=None):
    """RunConfig from a JSON file, or the defaults when ``path`` is None."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"configuration file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def dump_config(config, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
