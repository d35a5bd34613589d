"""Flat TOML configuration shared by the simulator and the estimator.

Every key names a field of :class:`~legmhe.sim.SimConfig` or of
:class:`~legmhe.noise.NoiseConfig`; covariances take a scalar, a 3-entry
diagonal or a 9-entry row-major matrix::

    scenario = "hopper"
    duration = 5.0
    seed = 7
    window = 20
    Q_vo = [2.5e-5, 2.5e-5, 2.5e-5]
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigParse, IoFailure
from .noise import NoiseConfig
from .sim import SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SIM_KEYS = frozenset(f.name for f in fields(SimConfig))
NOISE_KEYS = frozenset(f.name for f in fields(NoiseConfig))
_TUPLE_KEYS = ("accel_bias", "gyro_bias", "initial_attitude")


@dataclass
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)


def parse_config(text: str) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigParse(f"invalid TOML: {exc}") from exc
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> Config:
    sim, noise = {}, {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigParse("nested tables are not supported", key=key)
        if key in SIM_KEYS:
            sim[key] = tuple(value) if key in _TUPLE_KEYS else value
        elif key in NOISE_KEYS:
            noise[key] = value
        else:
            raise ConfigParse("unknown config key", key=key)
    for key in _TUPLE_KEYS:
        if key in sim and len(sim[key]) != 3:
            raise ConfigParse("expected 3 values", key=key)
    try:
        return Config(SimConfig(**sim), NoiseConfig(**noise))
    except (TypeError, ValueError) as exc:
        raise ConfigParse(str(exc)) from exc


def load_config(path) -> Config:
    if path is None:
        return Config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text)


def with_overrides(cfg: Config, sim: dict | None = None, noise: dict | None = None) -> Config:
    return Config(replace(cfg.sim, **(sim or {})), cfg.noise.with_changes(**(noise or {})))
