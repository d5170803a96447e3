"""Experiment configuration: JSON parsing, validation, canonical form and hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ParseError, ValidationError
from .models import ACTIVATION_KINDS, INPUT_KINDS, LINK_KINDS

MODES = ("trajectory", "sweep", "escape", "periodic_flatness", "selfcheck", "hermite_dump")
TARGET_KINDS = ("periodic", "single_index", "product")
ETA_RULES = ("constant", "inv_d", "info_exponent")


@dataclass(frozen=True)
class Grid:
    d: tuple[int, ...] = (64,)
    m: tuple[int, ...] = (1,)
    p: tuple[int, ...] = (1,)
    k_star: tuple[int, ...] = (1,)
    seeds: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class SgdSection:
    """Per-run SGD settings.

    eta = eta_scale * base, where base is 1 (constant), 1/d (inv_d) or
    d^(-k*/2) (info_exponent). T is ``T`` if given, else ceil(T_factor * d^T_power).
    """

    eta_rule: str = "constant"
    eta_scale: float = 0.01
    T: int | None = 1000
    T_factor: float = 5.0
    T_power: float = 2.0
    record_every: int = 100
    dense_until: int = 0
    mc_samples: int = 0
    grad_samples: int = 0
    kappa_samples: int = 0
    kappa_G: float | None = None
    clip_G: float | None = None
    stop_on_escape: bool = False


@dataclass(frozen=True)
class TargetSection:
    """``norm_u`` is a number or the string "sqrt_d"; ``degree`` 0 means "use k_star"."""

    kind: str = "periodic"
    link: str = "sin"
    degree: int = 0
    norm_u: float | str = 1.0


@dataclass(frozen=True)
class ActivationSection:
    kind: str = "relu"
    alpha: float = 0.0
    degree: int = 0


@dataclass(frozen=True)
class Thm1Section:
    C: float = 1.0
    kappa_bar: float = 1.0
    delta: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    mode: str = "trajectory"
    grid: Grid = field(default_factory=Grid)
    sgd: SgdSection = field(default_factory=SgdSection)
    target: TargetSection = field(default_factory=TargetSection)
    activation: ActivationSection = field(default_factory=ActivationSection)
    distribution: str = "standard_gaussian"
    escape_threshold: float = 0.5
    thm1: Thm1Section = field(default_factory=Thm1Section)
    output_dir: str = "results"

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


_SECTIONS = {"grid": Grid, "sgd": SgdSection, "target": TargetSection, "activation": ActivationSection, "thm1": Thm1Section}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return config_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def config_from_dict(raw: Any) -> ExperimentConfig:
    """Build and validate; every problem is collected before raising."""
    errors: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ValidationError([("$", "top level must be an object")])
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            errors.append((key, "unknown field"))
    kwargs: dict[str, Any] = {}
    for key in known:
        if key not in raw:
            continue
        val = raw[key]
        if key in _SECTIONS:
            sec_cls = _SECTIONS[key]
            if not isinstance(val, dict):
                errors.append((key, "must be an object"))
                continue
            sec_known = {f.name for f in dataclasses.fields(sec_cls)}
            for sk in val:
                if sk not in sec_known:
                    errors.append((f"{key}.{sk}", "unknown field"))
            sec_kwargs = {k: v for k, v in val.items() if k in sec_known}
            if key == "grid":
                sec_kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in sec_kwargs.items()}
            kwargs[key] = sec_cls(**sec_kwargs)
        else:
            kwargs[key] = val
    if "name" not in raw:
        errors.append(("name", "required"))
        kwargs["name"] = ""
    if errors:
        raise ValidationError(errors)
    cfg = ExperimentConfig(**kwargs)
    errors = validate(cfg)
    if errors:
        raise ValidationError(errors)
    return cfg


def validate(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    errs: list[tuple[str, str]] = []

    def need(cond: bool, path: str, msg: str) -> None:
        if not cond:
            errs.append((path, msg))

    need(isinstance(cfg.name, str) and cfg.name != "" and "/" not in cfg.name, "name", "must be a non-empty string without '/'")
    need(cfg.mode in MODES, "mode", f"must be one of {', '.join(MODES)}")
    g = cfg.grid
    for fname, lo in (("d", 1), ("m", 1), ("p", 1), ("k_star", 1), ("seeds", 0)):
        vals = getattr(g, fname)
        if not isinstance(vals, tuple) or len(vals) == 0:
            errs.append((f"grid.{fname}", "must be a non-empty list"))
            continue
        for i, v in enumerate(vals):
            need(_is_int(v) and v >= lo, f"grid.{fname}[{i}]", f"must be an integer >= {lo}")
    s = cfg.sgd
    need(s.eta_rule in ETA_RULES, "sgd.eta_rule", f"must be one of {', '.join(ETA_RULES)}")
    need(_is_num(s.eta_scale) and s.eta_scale >= 0, "sgd.eta_scale", "must be a non-negative number")
    need(s.T is None or (_is_int(s.T) and s.T >= 0), "sgd.T", "must be a non-negative integer or null")
    need(_is_num(s.T_factor) and s.T_factor > 0, "sgd.T_factor", "must be positive")
    need(_is_num(s.T_power) and s.T_power >= 0, "sgd.T_power", "must be non-negative")
    need(_is_int(s.record_every) and s.record_every >= 1, "sgd.record_every", "must be an integer >= 1")
    need(_is_int(s.dense_until) and s.dense_until >= 0, "sgd.dense_until", "must be a non-negative integer")
    for fname in ("mc_samples", "grad_samples", "kappa_samples"):
        v = getattr(s, fname)
        need(_is_int(v) and (v == 0 or v >= 2), f"sgd.{fname}", "must be 0 or an integer >= 2")
    for fname in ("kappa_G", "clip_G"):
        v = getattr(s, fname)
        need(v is None or (_is_num(v) and v > 0), f"sgd.{fname}", "must be positive or null")
    need(isinstance(s.stop_on_escape, bool), "sgd.stop_on_escape", "must be a boolean")
    t = cfg.target
    need(t.kind in TARGET_KINDS, "target.kind", f"must be one of {', '.join(TARGET_KINDS)}")
    need(t.link in LINK_KINDS, "target.link", f"must be one of {', '.join(LINK_KINDS)}")
    need(_is_int(t.degree) and 0 <= t.degree <= 60, "target.degree", "must be an integer in [0, 60]")
    need(t.norm_u == "sqrt_d" or (_is_num(t.norm_u) and t.norm_u > 0), "target.norm_u", "must be positive or \"sqrt_d\"")
    a = cfg.activation
    need(a.kind in ACTIVATION_KINDS, "activation.kind", f"must be one of {', '.join(ACTIVATION_KINDS)}")
    need(_is_num(a.alpha), "activation.alpha", "must be a number")
    need(_is_int(a.degree) and 0 <= a.degree <= 60, "activation.degree", "must be an integer in [0, 60]")
    need(cfg.distribution in INPUT_KINDS, "distribution", f"must be one of {', '.join(INPUT_KINDS)}")
    need(_is_num(cfg.escape_threshold) and 0 < cfg.escape_threshold < 1, "escape_threshold", "must lie in (0, 1)")
    th = cfg.thm1
    need(_is_num(th.C) and th.C > 0, "thm1.C", "must be positive")
    need(_is_num(th.kappa_bar) and th.kappa_bar > 0, "thm1.kappa_bar", "must be positive")
    need(_is_num(th.delta) and 0 < th.delta < 1, "thm1.delta", "must lie in (0, 1)")
    need(isinstance(cfg.output_dir, str) and cfg.output_dir != "", "output_dir", "must be a non-empty string")
    return errs
