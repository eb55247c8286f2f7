"""Run configuration: flat key=value INI with sections, validated up front."""

import configparser
import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .data import LAYOUTS
from .features import GROUP_ORDER, FeatureConfig
from .pipeline import METHODS

_FLAGS = tuple(f.name for f in fields(FeatureConfig))
_KEYS = {
    "data": {"root", "layout", "cache_dir"},
    "features": set(_FLAGS) | {"label"},
    "train": {"method", "c", "rounds", "degree", "lam", "gating", "tol",
              "gamma_scale", "n_train", "n_pos", "n_neg"},
    "eval": {"methods", "seeds", "stride", "smooth"},
}


@dataclass(frozen=True)
class RunConfig:
    root: Path
    layout: str = "generic"
    cache_dir: Path | None = None
    features: FeatureConfig = FeatureConfig()
    label: str = "full"
    method: str = "rbmkl"
    c: float = 1.0
    rounds: int = 200
    degree: int = 2
    lam: float = 1.0
    gating: str = ""
    tol: float = 1e-3
    gamma_scale: float | None = None
    n_train: int = 2
    n_pos: int = 10
    n_neg: int = 10
    # lmkl is opt-in: it cannot run without a gating group being named
    methods: tuple = tuple(m for m in METHODS if m != "lmkl")
    seeds: tuple = (1, 2, 3, 4, 5)
    stride: int = 4
    # None picks the sigma the fixation density uses; 0 turns blurring off
    smooth: float | None = None

    def params(self) -> dict:
        return {"c": self.c, "rounds": self.rounds, "tol": self.tol,
                "degree": self.degree, "lam": self.lam,
                "gating": self.gating or None,
                "gamma_scale": self.gamma_scale}


def _parse_ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _parse_names(text: str) -> tuple:
    return tuple(text.replace(",", " ").split())


def load_config(path, env=None) -> RunConfig:
    env = os.environ if env is None else env
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    parser.read(path)

    for section in parser.sections():
        if section not in _KEYS:
            raise ValueError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KEYS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, default=None):
        return parser.get(section, key, fallback=default)

    root = get("data", "root")
    if not root:
        raise ValueError("config needs data.root")
    kw = {"root": Path(root), "layout": get("data", "layout", "generic")}
    cache = get("data", "cache_dir") or env.get("SALIENCE_CACHE_DIR")
    kw["cache_dir"] = Path(cache) if cache else kw["root"] / ".feature-cache"

    flag_values = {}
    for name in _FLAGS:
        if parser.has_option("features", name):
            flag_values[name] = parser.getboolean("features", name)
    kw["features"] = FeatureConfig(**flag_values)
    kw["label"] = get("features", "label", "full")

    kw["method"] = get("train", "method", "rbmkl")
    for key, cast in (("c", float), ("rounds", int), ("degree", int),
                      ("lam", float), ("tol", float), ("gamma_scale", float),
                      ("n_train", int), ("n_pos", int), ("n_neg", int)):
        raw = get("train", key)
        if raw is not None:
            kw[key] = cast(raw)
    kw["gating"] = get("train", "gating", "")

    raw = get("eval", "methods")
    if raw is not None:
        kw["methods"] = _parse_names(raw)
    raw = get("eval", "seeds")
    if raw is not None:
        kw["seeds"] = _parse_ints(raw)
    raw = get("eval", "stride")
    if raw is not None:
        kw["stride"] = int(raw)
    raw = get("eval", "smooth")
    if raw is not None:
        kw["smooth"] = float(raw)

    cfg = RunConfig(**kw)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {cfg.layout!r}")
    if cfg.method not in METHODS:
        raise ValueError(f"train.method must be one of {METHODS}, got {cfg.method!r}")
    for m in cfg.methods:
        if m not in METHODS:
            raise ValueError(f"eval.methods holds unknown method {m!r}")
    if not cfg.methods:
        raise ValueError("eval.methods must not be empty")
    if not cfg.seeds:
        raise ValueError("eval.seeds must not be empty")
    if not cfg.features.enabled():
        raise ValueError("every feature group is disabled")
    needs_gating = cfg.method == "lmkl" or "lmkl" in cfg.methods
    if needs_gating:
        if not cfg.gating:
            raise ValueError("lmkl needs train.gating naming a feature group")
        if cfg.gating not in GROUP_ORDER:
            raise ValueError(f"unknown gating group {cfg.gating!r}")
        if cfg.gating != "external" and cfg.gating not in cfg.features.enabled():
            raise ValueError(f"gating group {cfg.gating!r} is not enabled")
    for name, value in (("c", cfg.c), ("tol", cfg.tol), ("lam", cfg.lam)):
        if not value > 0:
            raise ValueError(f"train.{name} must be positive")
    if cfg.gamma_scale is not None and not cfg.gamma_scale > 0:
        raise ValueError("train.gamma_scale must be positive")
    if cfg.smooth is not None and cfg.smooth < 0:
        raise ValueError("eval.smooth must be >= 0")
    for name, value in (("rounds", cfg.rounds), ("degree", cfg.degree),
                        ("n_train", cfg.n_train), ("n_pos", cfg.n_pos),
                        ("n_neg", cfg.n_neg), ("stride", cfg.stride)):
        if value < 1:
            raise ValueError(f"{name} must be at least 1")


def config_hash(cfg: RunConfig) -> str:
    parts = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        if isinstance(v, Path):
            v = str(v)
        if isinstance(v, FeatureConfig):
            v = v.enabled()
        parts.append((f.name, v))
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:12]
