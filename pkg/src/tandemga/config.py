"""Experiment configuration: flat ``section.key = value`` files.

Angles are written in degrees at this boundary (keys ending in ``_deg``;
angular rates in degrees per second) and converted to radians on load.
Unknown or repeated keys are errors.
"""

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .ga import GaConfig
from .plant import PlantParams, SensorParams, SimConfig
from .supervisor import FitnessWeights, HypercubeLimits, ResetTolerance

DEG = math.pi / 180.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    T: float = 10.0
    rms_window: float = 30.0
    reset_budget: float = 5.0
    start: tuple = (0.05, 0.0, 0.05, 0.0)
    s0: tuple = (0.0, 0.0, 0.0, 0.0)
    observe: str = "measured"

    def __post_init__(self):
        if self.observe not in ("measured", "true"):
            raise ValueError("episode.observe must be 'measured' or 'true'")
        if self.T <= 0 or self.rms_window <= 0 or self.reset_budget <= 0:
            raise ValueError("episode durations must be positive")


@dataclass(frozen=True)
class SafeConfig:
    q: tuple = (100.0, 1.0, 100.0, 1.0)
    r: float = 1.0
    gain_file: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    sensors: SensorParams = field(default_factory=SensorParams)
    sim: SimConfig = field(default_factory=SimConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    limits: HypercubeLimits = field(default_factory=HypercubeLimits)
    weights: FitnessWeights = field(default_factory=FitnessWeights)
    tol: ResetTolerance = field(default_factory=ResetTolerance)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    safe: SafeConfig = field(default_factory=SafeConfig)
    workers: int = 1
    out: str = "out"

    def digest(self) -> str:
        return hashlib.sha256(canonical_text(self).encode()).hexdigest()[:16]


_SECTIONS = ("plant", "sensors", "sim", "ga", "limits", "weights", "tol")
_ANGLES = {
    ("plant", "theta_max"), ("sensors", "offset_theta"), ("sensors", "quant_theta"),
    ("sensors", "noise_std_theta"), ("limits", "dtheta"), ("limits", "domega"),
    ("weights", "Aw"), ("weights", "A_M"), ("tol", "theta"), ("tol", "omega"),
}
_STATE_NAMES = ("p", "v", "theta", "omega")
_STATE_ANGLE = (False, False, True, True)


def _key(section, name):
    return f"{section}.{name}_deg" if (section, name) in _ANGLES else f"{section}.{name}"


def _parse_scalar(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text, 0)
    if kind is float:
        return float(text)
    return text


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def canonical_items(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Every result-affecting setting as (key, text) in SI units, sorted by key."""
    items = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            items.append((f"{section}.{f.name}", _fmt(getattr(obj, f.name))))
    ep = cfg.episode
    for name in ("T", "rms_window", "reset_budget", "observe"):
        items.append((f"episode.{name}", _fmt(getattr(ep, name))))
    for prefix, vec in (("start", ep.start), ("s0", ep.s0)):
        for n, v in zip(_STATE_NAMES, vec):
            items.append((f"episode.{prefix}_{n}", _fmt(float(v))))
    for n, v in zip(_STATE_NAMES, cfg.safe.q):
        items.append((f"safe.q_{n}", _fmt(float(v))))
    items.append(("safe.r", _fmt(cfg.safe.r)))
    items.append(("safe.gain_file", cfg.safe.gain_file))
    return sorted(items)


def canonical_text(cfg: ExperimentConfig) -> str:
    # run.out and run.workers never change results, so they stay out of the digest
    return "\n".join(f"{k} = {v}" for k, v in canonical_items(cfg)) + "\n"


def _known_keys() -> dict:
    keys = {}
    defaults = ExperimentConfig()
    for section in _SECTIONS:
        for f in dataclasses.fields(getattr(defaults, section)):
            keys[_key(section, f.name)] = (section, f.name, f.type)
    for name, kind in (("T", float), ("rms_window", float), ("reset_budget", float), ("observe", str)):
        keys[f"episode.{name}"] = ("episode", name, kind)
    for prefix in ("start", "s0"):
        for i, (n, ang) in enumerate(zip(_STATE_NAMES, _STATE_ANGLE)):
            keys[f"episode.{prefix}_{n}_deg" if ang else f"episode.{prefix}_{n}"] = (f"episode.{prefix}", i, float)
    for i, n in enumerate(_STATE_NAMES):
        keys[f"safe.q_{n}"] = ("safe.q", i, float)
    keys["safe.r"] = ("safe", "r", float)
    keys["safe.gain_file"] = ("safe", "gain_file", str)
    keys["run.workers"] = ("run", "workers", int)
    keys["run.out"] = ("run", "out", str)
    return keys


KNOWN_KEYS = _known_keys()


def parse_lines(lines, source="<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def build(raw: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    updates: dict[str, dict] = {}
    ep_vec = {"start": list(base.episode.start), "s0": list(base.episode.s0)}
    q = list(base.safe.q)
    top = {}
    for key, text in raw.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        section, name, kind = KNOWN_KEYS[key]
        try:
            value = _parse_scalar(text, kind)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
        if key.endswith("_deg"):
            value = value * DEG
        if section.startswith("episode."):
            ep_vec[section.split(".")[1]][name] = value
        elif section == "safe.q":
            q[name] = value
        elif section == "run":
            top[name] = value
        else:
            updates.setdefault(section, {})[name] = value
    try:
        parts = {s: dataclasses.replace(getattr(base, s), **updates.get(s, {})) for s in _SECTIONS}
        episode = dataclasses.replace(base.episode, **updates.get("episode", {}),
                                      start=tuple(ep_vec["start"]), s0=tuple(ep_vec["s0"]))
        safe = dataclasses.replace(base.safe, **updates.get("safe", {}), q=tuple(q))
        cfg = ExperimentConfig(**parts, episode=episode, safe=safe,
                               workers=top.get("workers", base.workers), out=top.get("out", base.out))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.workers < 1:
        raise ConfigError("run.workers must be at least 1")
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    raw = parse_lines(lines, str(path))
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown override key {key!r}")
        raw[key] = value
    return build(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    """Config file text that reproduces ``cfg`` (angles in degrees)."""
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if (section, f.name) in _ANGLES:
                v = v / DEG
            lines.append(f"{_key(section, f.name)} = {_fmt(v)}")
    ep = cfg.episode
    for name in ("T", "rms_window", "reset_budget", "observe"):
        lines.append(f"episode.{name} = {_fmt(getattr(ep, name))}")
    for prefix, vec in (("start", ep.start), ("s0", ep.s0)):
        for n, ang, v in zip(_STATE_NAMES, _STATE_ANGLE, vec):
            key = f"episode.{prefix}_{n}_deg" if ang else f"episode.{prefix}_{n}"
            lines.append(f"{key} = {_fmt(float(v) / DEG if ang else float(v))}")
    for n, v in zip(_STATE_NAMES, cfg.safe.q):
        lines.append(f"safe.q_{n} = {_fmt(float(v))}")
    lines.append(f"safe.r = {_fmt(cfg.safe.r)}")
    if cfg.safe.gain_file:
        lines.append(f"safe.gain_file = {cfg.safe.gain_file}")
    lines.append(f"run.workers = {cfg.workers}")
    lines.append(f"run.out = {cfg.out}")
    return "\n".join(lines) + "\n"
