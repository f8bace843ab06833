# src/config.py
"""
Run configuration.

A run config file is plain `key = value` lines with '#' comments, read with
python-dotenv (no variable interpolation). Every key is optional; missing
keys keep their defaults. Process-wide settings (plots directory,
verbosity) come from the environment, optionally seeded from `.env`.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Optional, Union

from dotenv import dotenv_values, load_dotenv

from src.network.vggnet import ContentLayer, PoolingMode
from src.transfer.iist import IistConfig, broadcast_alpha
from src.workflows.iist_constants import (
    DEFAULT_MAX_TRAIN_SAMPLES,
    DEFAULT_NU,
    DEFAULT_RADIUS,
    DETECTOR_OTSU,
    DETECTORS,
)

PathLike = Union[str, Path]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    method: str = DETECTOR_OTSU
    nu: float = DEFAULT_NU
    gamma: Optional[float] = None      # None -> 1 / (d * Var)
    radius: int = DEFAULT_RADIUS
    max_train_samples: int = DEFAULT_MAX_TRAIN_SAMPLES

    def validate(self) -> "DetectorConfig":
        if self.method not in DETECTORS:
            raise ValueError(f"detector must be one of {DETECTORS}, got {self.method!r}")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        if self.gamma is not None and not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        if self.max_train_samples < 2:
            raise ValueError(f"max_train_samples must be >= 2, got {self.max_train_samples}")
        return self


@dataclass(frozen=True)
class RunConfig:
    iist: IistConfig = field(default_factory=IistConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)


@dataclass(frozen=True)
class Settings:
    plots_dir: str = "plots"
    verbose: bool = False


# ---------- Value parsers ----------


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_optional_int(raw: str) -> Optional[int]:
    value = raw.strip().lower()
    if value in ("", "none"):
        return None
    return int(value)


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def parse_content_layer(raw: str) -> ContentLayer:
    return ContentLayer(raw.strip().lower().replace("-", "_"))


def parse_pooling(raw: str) -> PoolingMode:
    value = raw.strip().lower()
    if value == "avg":
        value = "average"
    return PoolingMode(value)


def _parse_alpha(raw: str):
    parts = [p for p in raw.replace(" ", "").split(",") if p]
    return broadcast_alpha([float(p) for p in parts])


def _parse_stages(raw: str) -> FrozenSet[int]:
    return frozenset(int(p) for p in raw.replace(" ", "").split(",") if p)


def _parse_gamma(raw: str) -> Optional[float]:
    value = raw.strip().lower()
    if value in ("", "scale", "auto"):
        return None
    return float(value)


# key -> (section, field, parser)
_FIELDS: Dict[str, tuple] = {
    "lambda_c": ("iist", "lambda_c", _parse_float),
    "alpha": ("iist", "alpha", _parse_alpha),
    "max_outer_iters": ("iist", "max_outer_iters", _parse_int),
    "epsilon": ("iist", "epsilon", _parse_float),
    "content_layer": ("iist", "content_layer", parse_content_layer),
    "pooling": ("iist", "pooling", parse_pooling),
    "seed": ("iist", "seed", _parse_int),
    "precision": ("iist", "precision", lambda raw: raw.strip().lower()),
    "snapshot_stages": ("iist", "snapshot_stages", _parse_stages),
    "refine_inner_iters": ("iist", "refine_inner_iters", _parse_optional_int),
    "relative_terms": ("iist", "relative_terms", _parse_bool),
    "lbfgs_memory": ("lbfgs", "memory", _parse_int),
    "lbfgs_max_inner_iters": ("lbfgs", "max_inner_iters", _parse_int),
    "lbfgs_grad_tol": ("lbfgs", "grad_tol", _parse_float),
    "lbfgs_c1": ("lbfgs", "c1", _parse_float),
    "lbfgs_c2": ("lbfgs", "c2", _parse_float),
    "detector": ("detector", "method", lambda raw: raw.strip().lower()),
    "nu": ("detector", "nu", _parse_float),
    "gamma": ("detector", "gamma", _parse_gamma),
    "radius": ("detector", "radius", _parse_int),
    "max_train_samples": ("detector", "max_train_samples", _parse_int),
}


def _check_lines(text: str, source: str) -> None:
    """Reject lines that are neither blank, a comment, nor `key = value`."""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")


def parse_run_config(text: str, source: str = "<config>", base: Optional[RunConfig] = None) -> RunConfig:
    """
    Parse config text into a validated RunConfig.

    Raises:
        ConfigError for unknown keys, unparsable values, or values that
        break the IistConfig / detector invariants.
    """
    _check_lines(text, source)
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)

    updates: Dict[str, Dict[str, object]] = {"iist": {}, "lbfgs": {}, "detector": {}}
    for key, raw in values.items():
        name = key.strip().lower()
        if name not in _FIELDS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        if raw is None:
            raise ConfigError(f"{source}: key {key!r} has no value")
        section, attr, parser = _FIELDS[name]
        try:
            updates[section][attr] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {raw!r} ({exc})") from exc

    base = base or RunConfig()
    try:
        lbfgs = replace(base.iist.lbfgs, **updates["lbfgs"])
        iist = replace(base.iist, lbfgs=lbfgs, **updates["iist"]).validate()
        detector = replace(base.detector, **updates["detector"]).validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    return RunConfig(iist=iist, detector=detector)


def load_run_config(path: Optional[PathLike], base: Optional[RunConfig] = None) -> RunConfig:
    """Read a config file; None gives the defaults."""
    if path is None:
        return base or RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    return parse_run_config(text, source=str(p), base=base)


def load_settings(env_file: Optional[PathLike] = None) -> Settings:
    """Environment settings, after loading `.env` (existing variables win)."""
    load_dotenv(env_file, override=False)
    try:
        verbose = _parse_bool(os.getenv("DHFF_VERBOSE", ""))
    except ValueError as exc:
        raise ConfigError(f"DHFF_VERBOSE: {exc}") from exc
    return Settings(
        plots_dir=os.getenv("DHFF_PLOTS_DIR", "plots"),
        verbose=verbose,
    )
