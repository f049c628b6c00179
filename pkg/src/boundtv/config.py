"""Experiment configuration: INI-style key/value file with one section per variant.

Keys in ``[solver]`` apply to every variant; a variant section such as
``[tikhonov]`` overrides them for that variant only.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .operators import TV_MODES
from .solver import PROJECTIONS, VARIANTS, SolverConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "default_config_path",
    "load_config",
    "validate_config",
]


class ConfigError(ValueError):
    def __init__(self, errors: List[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


@dataclass
class ExperimentConfig:
    depth: float = 100.0
    aperture: float = 2000.0
    n: int = 200
    uplift_scale: float = 0.05
    blocks: List[Tuple[float, float, float]] = field(default_factory=list)
    lower: float = 0.0
    upper: float = 1.0
    sigma_frac: float = 0.15
    seed: int = 0
    solvers: Dict[str, SolverConfig] = field(default_factory=dict)
    tikhonov_beta: Optional[float] = None
    output_dir: str = "results"
    variants: List[str] = field(default_factory=lambda: list(VARIANTS))
    snapshot_stride: int = 10


def default_config_path() -> Path:
    return Path(str(resources.files("boundtv") / "data" / "default.ini"))


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError("expected an integer")
    return int(v)


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("none", "off", "") else _float(text)


def _auto_float(text: str) -> Optional[float]:
    return None if text.strip().lower() == "auto" else _float(text)


def _choice(options):
    def parse(text: str) -> str:
        v = text.strip()
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v

    return parse


# key -> (parser, check, constraint text); check=None means any parsed value
_SOLVER_KEYS = {
    "alpha": (_float, lambda v: v > 0 and math.isfinite(v), "alpha > 0"),
    "lambda": (_float, lambda v: v > 0 and math.isfinite(v), "lambda > 0"),
    "delta": (_float, lambda v: v >= 0 and math.isfinite(v), "delta >= 0"),
    "n_inner": (_int, lambda v: v >= 1, "n_inner >= 1"),
    "n_outer": (_int, lambda v: v >= 1, "n_outer >= 1"),
    "cg_steps": (_int, lambda v: v >= 1, "cg_steps >= 1"),
    "target_accuracy": (_optional_float, lambda v: v is None or v > 0, "target_accuracy > 0 or none"),
    "tv_mode": (_choice(TV_MODES), None, ""),
    "projection": (_choice(PROJECTIONS), None, ""),
    "spacing": (_float, lambda v: v > 0 and math.isfinite(v), "spacing > 0"),
}
_TIKHONOV_KEYS = {"beta": (_auto_float, lambda v: v is None or v > 0, "beta > 0 or auto")}

_SECTIONS = {
    "experiment": {
        "output_dir": (str, None, ""),
        "variants": (str, None, ""),
        "snapshot_stride": (_int, lambda v: v >= 0, "snapshot_stride >= 0"),
    },
    "geometry": {
        "depth": (_float, lambda v: v > 0 and math.isfinite(v), "depth > 0"),
        "aperture": (_float, lambda v: v > 0 and math.isfinite(v), "aperture > 0"),
        "n": (_int, lambda v: v >= 2, "n >= 2"),
        "uplift_scale": (_float, lambda v: v > 0 and math.isfinite(v), "uplift_scale > 0"),
    },
    "truth": {"blocks": (str, None, "")},
    "bounds": {"lower": (_float, None, ""), "upper": (_float, None, "")},
    "noise": {
        "sigma_frac": (_float, lambda v: v >= 0 and math.isfinite(v), "sigma_frac >= 0"),
        "seed": (_int, lambda v: v >= 0, "seed >= 0"),
    },
    "solver": _SOLVER_KEYS,
    "bound_constrained": _SOLVER_KEYS,
    "unconstrained_tv": _SOLVER_KEYS,
    "naive_projection": _SOLVER_KEYS,
    "tikhonov": {**_SOLVER_KEYS, **_TIKHONOV_KEYS},
}

_FIELD_NAMES = {"lambda": "lam"}


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Map ``(section, key)`` to the 1-based line where the key is set."""
    index = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            index[(section, "")] = lineno
            continue
        m = re.match(r"([A-Za-z_][\w]*)\s*[=:]", line)
        if m and section is not None:
            index[(section, m.group(1).lower())] = lineno
    return index


def _parse(path) -> Tuple[ExperimentConfig, List[str]]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = _line_index(text)
    errors: List[str] = []

    def where(section, key=""):
        ln = lines.get((section, key), lines.get((section, "")))
        loc = f"{path}:{ln}" if ln else str(path)
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None
    )
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        return ExperimentConfig(), [f"{path}: {exc}".replace("\n", " ")]

    values: Dict[str, Dict[str, object]] = {}
    for section in parser.sections():
        name = section.lower()
        if name not in _SECTIONS:
            errors.append(f"{where(name)}: unknown section")
            continue
        spec = _SECTIONS[name]
        values[name] = {}
        for key, raw in parser.items(section):
            if key not in spec:
                errors.append(f"{where(name, key)}: unknown key")
                continue
            parse, check, constraint = spec[key]
            try:
                v = parse(raw)
            except ValueError as exc:
                errors.append(f"{where(name, key)} = {raw!r}: {exc}")
                continue
            if check is not None and not check(v):
                errors.append(f"{where(name, key)} = {raw}: violates {constraint}")
                continue
            values[name][key] = v

    cfg = ExperimentConfig()
    exp = values.get("experiment", {})
    cfg.output_dir = exp.get("output_dir", cfg.output_dir)
    cfg.snapshot_stride = exp.get("snapshot_stride", cfg.snapshot_stride)
    if "variants" in exp:
        names = [v.strip() for v in str(exp["variants"]).split(",") if v.strip()]
        bad = [v for v in names if v not in VARIANTS]
        if bad or not names:
            errors.append(
                f"{where('experiment', 'variants')}: unknown variant(s) {bad}; "
                f"choose from {', '.join(VARIANTS)}"
            )
        else:
            cfg.variants = names

    geo = values.get("geometry", {})
    cfg.depth = geo.get("depth", cfg.depth)
    cfg.aperture = geo.get("aperture", cfg.aperture)
    cfg.n = geo.get("n", cfg.n)
    cfg.uplift_scale = geo.get("uplift_scale", cfg.uplift_scale)

    blocks_raw = values.get("truth", {}).get("blocks", "")
    for i, line in enumerate(str(blocks_raw).strip().splitlines()):
        if not line.strip():
            continue
        parts = line.replace(",", " ").split()
        try:
            start, end, value = (float(p) for p in parts)
        except ValueError:
            errors.append(
                f"{where('truth', 'blocks')}: block {i + 1} {line.strip()!r} "
                "must be 'start end value'"
            )
            continue
        if not (0.0 <= start < end <= cfg.aperture) or not math.isfinite(value):
            errors.append(
                f"{where('truth', 'blocks')}: block {i + 1} [{start}, {end}) "
                f"is outside the domain [0, {cfg.aperture}]"
            )
            continue
        cfg.blocks.append((start, end, value))

    bnd = values.get("bounds", {})
    cfg.lower = bnd.get("lower", cfg.lower)
    cfg.upper = bnd.get("upper", cfg.upper)
    if cfg.lower > cfg.upper:
        errors.append(f"{where('bounds', 'upper')}: lower bound {cfg.lower} exceeds upper bound {cfg.upper}")

    noise = values.get("noise", {})
    cfg.sigma_frac = noise.get("sigma_frac", cfg.sigma_frac)
    cfg.seed = noise.get("seed", cfg.seed)

    shared = values.get("solver", {})
    for variant in VARIANTS:
        merged = dict(shared)
        merged.update(values.get(variant, {}))
        beta = merged.pop("beta", None)
        if variant == "tikhonov":
            cfg.tikhonov_beta = beta
        kwargs = {_FIELD_NAMES.get(k, k): v for k, v in merged.items()}
        kwargs["variant"] = variant
        if beta is not None:
            kwargs["tikhonov_beta"] = beta
        try:
            cfg.solvers[variant] = SolverConfig(**kwargs)
        except ValueError as exc:
            errors.append(f"{where(variant)}: {exc}")
    return cfg, errors


def validate_config(path) -> List[str]:
    """Every problem found in the file; an empty list means it is valid.

    Raises
    ------
    OSError
        If the file cannot be read.
    """
    return _parse(path)[1]


def load_config(path) -> ExperimentConfig:
    cfg, errors = _parse(path)
    if errors:
        raise ConfigError(errors)
    return cfg
