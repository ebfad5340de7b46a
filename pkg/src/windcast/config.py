"""Flat ``key = value`` run configuration with dotted section prefixes.

Example::

    # comments start with '#'
    seed = 0
    max_imfs = 3
    iceemdan.realizations = 30
    transformer.iterations = 200
    horizon.long = 144
    data.input = benchmark.csv
    synth.components = 2.0:0.0416:0.0; 1.0:0.1666:0.5

Every key maps onto one field of :class:`~windcast.pipeline.PipelineConfig`
(or its nested parameter objects), the data source, or the synthetic
generator. Unknown keys are rejected. Relative ``data.input`` paths resolve
against the directory of the config file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .iceemdan import IceemdanParams
from .mlp import LmParams
from .pipeline import HORIZON_CLASSES, PipelineConfig
from .series import SyntheticSpec
from .transformer import TransformerConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "dump_config", "format_components", "parse_components"]


class ConfigError(ValueError):
    """Malformed, unknown or invalid configuration entry."""


# seeds and the decomposition depth live at the top level, not per section
_SECTIONS = {
    "iceemdan": (IceemdanParams, {"seed", "max_imfs"}),
    "transformer": (TransformerConfig, {"seed"}),
    "lm": (LmParams, {"seed"}),
}
_TOP = {
    "seed": int,
    "max_imfs": int,
    "mlp.lags": int,
    "split_fraction": float,
    "split_boundary": int,
    "calibration_fraction": float,
    "report_horizon": str,
    "strict_causal": bool,
}
_SYNTH = {"trend_slope": float, "noise_std": float, "length": int, "seed": int, "offset": float}


@dataclass(frozen=True)
class RunConfig:
    """Pipeline settings plus where the data comes from."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    input: Path | None = None
    column: str = "wind_speed"
    synth: SyntheticSpec | None = None


def _convert(key, raw, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_components(text: str) -> tuple:
    """``"a:f:p; a:f:p"`` to ``((a, f, p), ...)``."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3:
            raise ConfigError(f"synth.components: expected amplitude:frequency:phase, got {chunk!r}")
        out.append(tuple(_convert("synth.components", p.strip(), float) for p in parts))
    return tuple(out)


def format_components(components) -> str:
    return "; ".join(":".join(repr(float(v)) for v in c) for c in components)


def _field_types(cls):
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse config text; ``base_dir`` anchors relative data paths."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    sections = {name: {} for name in _SECTIONS}
    top, horizons, synth = {}, {}, {}
    input_path, column = None, "wind_speed"
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        head, _, tail = key.partition(".")
        if key in _TOP:
            top[key] = _convert(key, raw, _TOP[key])
        elif head in _SECTIONS and tail:
            cls, excluded = _SECTIONS[head]
            types = _field_types(cls)
            if tail not in types or tail in excluded:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            sections[head][tail] = _convert(key, raw, types[tail])
        elif head == "horizon" and tail in HORIZON_CLASSES:
            horizons[tail] = _convert(key, raw, int)
        elif key == "data.input":
            p = Path(raw)
            input_path = p if p.is_absolute() else base / p
        elif key == "data.column":
            column = raw
        elif head == "synth" and tail == "components":
            synth["components"] = parse_components(raw)
        elif head == "synth" and tail in _SYNTH:
            synth[tail] = _convert(key, raw, _SYNTH[tail])
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    kwargs = {}
    try:
        for name, (cls, _) in _SECTIONS.items():
            kwargs[name] = cls(**sections[name])
        if horizons:
            missing = set(HORIZON_CLASSES) - set(horizons)
            if missing:
                raise ConfigError(f"horizon: missing {sorted(missing)}")
            kwargs["horizons"] = horizons
        for key, value in top.items():
            kwargs["mlp_lags" if key == "mlp.lags" else key] = value
        pipeline = PipelineConfig(**kwargs)
        spec = SyntheticSpec(**synth) if synth else None
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(pipeline, input_path, column, spec)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, path.parent)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(rc: RunConfig) -> str:
    """Every resolved setting, in a form :func:`parse_config` reads back unchanged."""
    p = rc.pipeline
    lines = [f"seed = {p.seed}", f"max_imfs = {p.max_imfs}", f"mlp.lags = {p.mlp_lags}"]
    lines.append(f"split_fraction = {_fmt(p.split_fraction)}")
    if p.split_boundary is not None:
        lines.append(f"split_boundary = {p.split_boundary}")
    lines += [
        f"calibration_fraction = {_fmt(p.calibration_fraction)}",
        f"report_horizon = {p.report_horizon}",
        f"strict_causal = {_fmt(p.strict_causal)}",
    ]
    lines += [f"horizon.{h} = {p.horizons[h]}" for h in HORIZON_CLASSES]
    for name, (_, excluded) in _SECTIONS.items():
        obj = getattr(p, name)
        for f in dataclasses.fields(obj):
            if f.name not in excluded:
                lines.append(f"{name}.{f.name} = {_fmt(getattr(obj, f.name))}")
    if rc.input is not None:
        lines.append(f"data.input = {Path(rc.input).resolve()}")
        lines.append(f"data.column = {rc.column}")
    if rc.synth is not None:
        s = rc.synth
        lines.append(f"synth.components = {format_components(s.components)}")
        lines += [f"synth.{k} = {_fmt(getattr(s, k))}" for k in _SYNTH]
    return "\n".join(lines) + "\n"


def with_overrides(rc: RunConfig, seed=None, strict_causal=None) -> RunConfig:
    """Apply command-line overrides."""
    p = rc.pipeline
    if seed is not None:
        p = replace(p, seed=seed)
    if strict_causal:
        p = replace(p, strict_causal=True)
    return replace(rc, pipeline=p)
