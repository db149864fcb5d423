"""Flat ``key = value`` config files with dotted keys for the objective.

Example::

    # point-mass ablation
    env_name = point_mass
    total_timesteps = 61440
    objective.variant = clip
    objective.epsilon = 0.2
    hidden_dims = 64, 64
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigurationError
from .objectives import ObjectiveConfig
from .trainer import TrainConfig

ALIASES = {"env": "env_name", "lambda": "lam", "T": "horizon_T", "N": "num_actors_N",
           "K": "epochs_K", "M": "minibatch_M"}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            try:
                return int(raw)
            except ValueError:
                as_float = float(raw)  # allow 1e5-style integers
                if not as_float.is_integer():
                    raise
                return int(as_float)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple) or key in ("hidden_dims", "log_std_anneal"):
            if raw.lower() in ("none", ""):
                return None if key == "log_std_anneal" else ()
            vals = [v.strip() for v in raw.strip("()[]").split(",") if v.strip()]
            return tuple(int(v) for v in vals) if key == "hidden_dims" else tuple(float(v) for v in vals)
        return raw
    except ValueError:
        raise ConfigurationError(f"cannot parse {raw!r} for config key {key!r}") from None


def parse_pairs(lines, source: str = "<overrides>") -> dict:
    pairs = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(pairs: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Apply string key/value pairs on top of ``base`` (or the preset for ``env_name``)."""
    pairs = {ALIASES.get(k, k): v for k, v in pairs.items()}
    if base is None:
        base = TrainConfig.preset(pairs.get("env_name", "point_mass").strip())
    top = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig)}
    obj = dataclasses.asdict(base.objective)
    for key, raw in pairs.items():
        if key.startswith("objective."):
            sub = key.split(".", 1)[1]
            if sub not in obj:
                raise ConfigurationError(f"unknown config key {key!r}")
            obj[sub] = _coerce(sub, raw, obj[sub])
        elif key == "objective":
            parsed = ObjectiveConfig.parse(raw)
            obj.update(variant=parsed.variant, epsilon=parsed.epsilon, beta=parsed.beta, d_targ=parsed.d_targ)
        elif key in top and key != "objective":
            default = top[key]
            if key == "log_std_anneal":
                default = ()
            top[key] = _coerce(key, raw, default)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    top["objective"] = ObjectiveConfig(**obj)
    return TrainConfig(**top)


def load_config(path=None, overrides=()) -> TrainConfig:
    """Read a config file (optional) and apply ``key=value`` overrides in order."""
    pairs = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        pairs.update(parse_pairs(path.read_text().splitlines(), str(path)))
    pairs.update(parse_pairs(overrides))
    return build_config(pairs)


def dump_config(config: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(TrainConfig):
        value = getattr(config, f.name)
        if f.name == "objective":
            for g in dataclasses.fields(ObjectiveConfig):
                lines.append(f"objective.{g.name} = {getattr(value, g.name)}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = {', '.join(str(v) for v in value)}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
