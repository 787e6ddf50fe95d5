"""Strict JSON run configuration.

Every key is checked against the dataclass it populates; a typo is an error
that names the key and the line it sits on, never a silently ignored value.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .oracle import PRESETS, NoiseSpec
from .pipeline import CollapseConfig, GenerationConfig, InitConfig, RefinementConfig, StageConfig
from .scene import CLOUD_FIELDS

ORACLE_KINDS = ("synthetic", "file_exchange")


class ConfigError(ValueError):
    pass


@dataclass
class SceneSpec:
    preset: str = "orbiter"
    n_splats: int = 96
    frame_count: int = 8
    seed: int = 0
    angular_velocity_deg: float = 10.0
    amplitude: float | None = None
    phase: float = 0.0


@dataclass
class OracleSpec:
    kind: str = "synthetic"
    exchange_dir: str | None = None
    timeout_s: float = 600.0
    poll_s: float = 0.5


@dataclass
class RunConfig:
    scene: SceneSpec | None = field(default_factory=SceneSpec)
    video_dir: str | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    stages: StageConfig = field(default_factory=StageConfig)
    seed: int = 0
    train_size: tuple = (64, 64)
    eval_size: tuple = (128, 128)
    output_dir: str = "runs/default"
    background: tuple = (0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["stages"].pop("background")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# nested sections and the dataclass each one fills
_SECTIONS = {
    "scene": SceneSpec,
    "noise": NoiseSpec,
    "oracle": OracleSpec,
    "stages": StageConfig,
    "stages.init": InitConfig,
    "stages.generation": GenerationConfig,
    "stages.refinement": RefinementConfig,
    "stages.collapse": CollapseConfig,
}
_LR_SECTIONS = ("stages.generation.attribute_lrs", "stages.refinement.attribute_lrs")


def _line_of(text: str, path: list[str]) -> int:
    """1-based line of the last key in ``path``, found by walking the
    earlier keys in order so a repeated name resolves to the right section."""
    pos = 0
    for key in path:
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if m is None:
            return 0
        pos = m.end()
    return text.count("\n", 0, pos) + 1


def _fail(text: str, path: list[str], message: str):
    line = _line_of(text, path)
    where = f" (line {line})" if line else ""
    raise ConfigError(f"{message}: {'.'.join(path)!r}{where}")


def _build(cls, data, path: list[str], text: str):
    if not isinstance(data, dict):
        _fail(text, path, "expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    if cls is StageConfig:
        known.pop("background")
    kwargs = {}
    for key, value in data.items():
        sub = path + [key]
        dotted = ".".join(sub)
        if key not in known:
            _fail(text, sub, "unknown config key")
        if dotted in _SECTIONS:
            if value is None and dotted == "scene":
                kwargs[key] = None
                continue
            kwargs[key] = _build(_SECTIONS[dotted], value, sub, text)
        elif dotted in _LR_SECTIONS:
            if not isinstance(value, dict):
                _fail(text, sub, "expected an object")
            for name in value:
                if name not in CLOUD_FIELDS:
                    _fail(text, sub + [name], "unknown config key")
            merged = dict(known[key].default_factory())
            merged.update({k: float(v) for k, v in value.items()})
            kwargs[key] = merged
        else:
            kwargs[key] = _coerce(value, known[key], sub, text)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        _fail(text, path or ["<root>"], f"invalid values ({exc})")


def _coerce(value, f: dataclasses.Field, path, text):
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(default, tuple) or f.name in ("train_size", "eval_size", "background"):
        if not isinstance(value, list):
            _fail(text, path, "expected a list")
        return tuple(value)
    if isinstance(default, bool) and not isinstance(value, bool):
        _fail(text, path, "expected true or false")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(text, path, "expected an integer")
    if isinstance(default, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
        _fail(text, path, "expected a number")
    if isinstance(default, float):
        return float(value)
    return value


def _validate(cfg: RunConfig, text: str):
    if (cfg.scene is None) == (cfg.video_dir is None):
        raise ConfigError("exactly one of 'scene' and 'video_dir' must be set")
    if cfg.scene is not None and cfg.scene.preset not in PRESETS:
        _fail(text, ["scene", "preset"], f"unknown preset {cfg.scene.preset!r}, choose from {PRESETS}")
    if cfg.oracle.kind not in ORACLE_KINDS:
        _fail(text, ["oracle", "kind"], f"unknown oracle kind {cfg.oracle.kind!r}, choose from {ORACLE_KINDS}")
    if cfg.oracle.kind == "synthetic" and cfg.scene is None:
        raise ConfigError("the synthetic oracle needs a 'scene'")
    if cfg.oracle.kind == "file_exchange" and not cfg.oracle.exchange_dir:
        _fail(text, ["oracle"], "file_exchange oracle needs 'exchange_dir'")
    for name in ("train_size", "eval_size"):
        size = getattr(cfg, name)
        if len(size) != 2 or not all(isinstance(v, int) and v >= 1 for v in size):
            _fail(text, [name], "expected [width, height] with positive integers")
    if len(cfg.background) != 3 or not all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in cfg.background):
        _fail(text, ["background"], "expected three values in [0, 1]")


def parse_config(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    cfg = _build(RunConfig, data, [], text)
    cfg.background = tuple(float(v) for v in cfg.background)
    cfg.stages.background = cfg.background
    _validate(cfg, text)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
