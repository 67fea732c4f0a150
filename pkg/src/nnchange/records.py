"""Plain-text formats: key=value run configs and observation streams."""

from __future__ import annotations

import json
from dataclasses import fields
from typing import Iterator, Optional, TextIO

import numpy as np

from .detector import DetectorConfig
from .simlab import ScenarioSpec


class FormatError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv):
    def parse(s: str):
        return None if s.strip().lower() in ("", "none") else conv(s)

    return parse


# every accepted key with its parser; scenario keys share ``dim`` and ``N0``
CONFIG_KEYS = {
    "k": int,
    "L": int,
    "n0": int,
    "n1": int,
    "N0": int,
    "dim": int,
    "kind": str,
    "kappa": float,
    "threshold": _opt(float),
    "target_arl": _opt(float),
    "calibration": str,
    "update_quantities": _bool,
    "metric": str,
    "resolve_every": _opt(int),
    "skew_B": int,
    "seed": int,
    "distribution": str,
    "delta": float,
    "sigma": float,
    "scale_mode": str,
    "tau": int,
    "length": int,
}
DETECTOR_KEYS = {f.name for f in fields(DetectorConfig)}
SCENARIO_KEYS = {"distribution", "delta", "sigma", "scale_mode", "tau", "length", "seed", "N0"}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise FormatError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](val)
        except ValueError as e:
            raise FormatError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return out


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_config(cfg: dict) -> str:
    """Canonical text form: known keys in table order, one per line."""
    bad = set(cfg) - set(CONFIG_KEYS)
    if bad:
        raise FormatError(f"unknown keys {sorted(bad)}")
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in CONFIG_KEYS if k in cfg)


def detector_config(cfg: dict, **overrides) -> DetectorConfig:
    kw = {k: v for k, v in cfg.items() if k in DETECTOR_KEYS}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"k", "L", "n0", "n1", "N0", "dim"} - set(kw)
    if missing:
        raise FormatError(f"config missing keys {sorted(missing)}")
    return DetectorConfig(**kw)


def scenario_spec(cfg: dict, **overrides) -> ScenarioSpec:
    kw = {k: v for k, v in cfg.items() if k in SCENARIO_KEYS}
    if "dim" in cfg:
        kw["d"] = cfg["dim"]
    kw.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"d", "N0", "tau", "length"} - set(kw)
    if missing:
        raise FormatError(f"scenario missing keys {sorted(missing)}")
    return ScenarioSpec(**kw)


def read_observations(fh: TextIO, dim: Optional[int] = None, source: str = "<input>") -> Iterator[np.ndarray]:
    """Yield observations from CSV rows or ``{"t": ..., "y": [...]}`` JSON lines.

    Blank lines and ``#`` comments are skipped.  Errors carry the line number.
    """
    last_t = None
    for lineno, raw in enumerate(fh, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if line.startswith("{"):
                obj = json.loads(line)
                y = np.asarray(obj["y"], dtype=float)
                if "t" in obj:
                    t = obj["t"]
                    if not isinstance(t, int) or (last_t is not None and t <= last_t):
                        raise ValueError("t must be a strictly increasing integer")
                    last_t = t
            else:
                y = np.array([float(v) for v in line.split(",")])
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"{source}:{lineno}: {e}") from None
        if y.ndim != 1 or y.size == 0:
            raise FormatError(f"{source}:{lineno}: expected a flat list of numbers")
        if dim is None:
            dim = y.size
        elif y.size != dim:
            raise FormatError(f"{source}:{lineno}: expected {dim} values, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise FormatError(f"{source}:{lineno}: non-finite value")
        yield y


def read_matrix(path: str, dim: Optional[int] = None) -> np.ndarray:
    with open(path) as fh:
        rows = list(read_observations(fh, dim, source=path))
    if not rows:
        raise FormatError(f"{path}: no observations")
    return np.vstack(rows)


def format_row(y) -> str:
    return ",".join(repr(float(v)) for v in y)
