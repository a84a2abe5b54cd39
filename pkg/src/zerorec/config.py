"""Experiment configuration: TOML documents, flag overrides, config hashing.

One TOML document describes one experiment; every artifact directory embeds
the hash of the configuration slice that produced it, which is how cache
hits and chain mismatches are detected.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from .errors import ConfigError
from .features import FeatureConfig
from .graph_embed import WalkConfig
from .model import TrainConfig

MODES = ("in_domain", "zero_shot_in_domain", "zero_shot_cross_domain")
SWEEP_AXES = ("train_fraction", "seen_fraction", "k")

CACHE_ENV = "ZEROREC_CACHE_DIR"


@dataclass
class DataConfig:
    rating_threshold: float = 3.0
    k_core: int = 5
    seen_fraction: float = 0.5
    train_fraction: float = 0.7
    valid_fraction: float = 0.1
    seed: int = 7
    format: str | None = None
    delimiter: str | None = None


@dataclass
class EvalConfig:
    n_negatives: int = 99
    seeds: list[int] = field(default_factory=lambda: [101, 102, 103, 104, 105])
    metric: str = "auc"


@dataclass
class ExperimentConfig:
    mode: str = "in_domain"
    threads: int = 0
    deterministic: bool = True
    data: DataConfig = field(default_factory=DataConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


_SECTIONS = {"data": DataConfig, "features": FeatureConfig, "model": TrainConfig, "eval": EvalConfig}


def _build_section(cls, payload: dict, path: str):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in payload.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}.{key}")
        if key == "walk":
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.walk must be a table")
            value = _build_section(WalkConfig, value, f"{path}.walk")
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from defaults, an optional TOML file, then overrides.

    Overrides use dotted keys (``data.seed``, ``features.walk.window``);
    ``None`` values are ignored so unset CLI flags fall through.
    """
    doc: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value

    top = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section [{key}] must be a table")
            top[key] = _build_section(_SECTIONS[key], value, key)
        elif key in ("mode", "threads", "deterministic"):
            top[key] = value
        else:
            raise ConfigError(f"unknown config key {key}")
    return ExperimentConfig(**top)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot render config value {v!r}")


def config_to_toml(cfg: ExperimentConfig) -> str:
    """Render the full configuration (all defaults filled) as TOML."""
    lines = []
    for key in ("mode", "threads", "deterministic"):
        lines.append(f"{key} = {_toml_value(getattr(cfg, key))}")
    lines.append("")

    def emit(name, obj):
        lines.append(f"[{name}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if is_dataclass(v):
                continue
            if v is None:
                lines.append(f"# {f.name} = (unset)")
            else:
                lines.append(f"{f.name} = {_toml_value(v)}")
        lines.append("")

    emit("data", cfg.data)
    emit("features", cfg.features)
    emit("features.walk", cfg.features.walk)
    emit("model", cfg.model)
    emit("eval", cfg.eval)
    return "\n".join(lines)


def config_hash(obj) -> str:
    """Stable 16-hex-digit digest of any JSON-serializable config slice."""
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = asdict(obj)
    payload = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cache_root(explicit: str | None = None) -> Path:
    """Artifact root: explicit flag, then ZEROREC_CACHE_DIR, then ./artifacts."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path("artifacts")
