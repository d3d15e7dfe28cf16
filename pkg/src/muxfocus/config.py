"""TOML experiment configuration.

A config file has up to three tables whose keys are the dataclass field names::

    [optics]            # OpticsConfig
    noise_sigma = 0.003
    crosstalk = { w_gr = 0.12, w_rg = 0.08 }

    [scan]              # ScanPlan
    rows = 10
    focus_profile = { amplitude = 3.0, seed = 4 }

    [timing]            # TimingModel
    t_stage = 0.2

Precedence: built-in defaults < config file < ``section.key=value`` overrides.
"""
from __future__ import annotations

import dataclasses
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .crosstalk import CrosstalkCoefficients
from .frames import MuxFocusError
from .optics import OpticsConfig
from .scan import FocusProfile, ScanPlan, TimingModel

SECTIONS = {"optics": OpticsConfig, "scan": ScanPlan, "timing": TimingModel}
NESTED = {("optics", "crosstalk"): CrosstalkCoefficients, ("scan", "focus_profile"): FocusProfile}


class ConfigError(MuxFocusError):
    pass


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    return data


def parse_value(text: str):
    """Interpret an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``section.key[.subkey]=value`` to a nested config dict in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    if len(parts) < 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"override key {key!r} must start with one of {sorted(SECTIONS)}")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = parse_value(raw.strip())
    return data


def _field_names(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _build(section: str, values: dict):
    cls = SECTIONS[section]
    values = dict(values)
    unknown = set(values) - _field_names(cls)
    if unknown:
        raise ConfigError(f"unknown [{section}] field(s): {sorted(unknown)}")
    for (sec, name), sub in NESTED.items():
        if sec == section and isinstance(values.get(name), dict):
            bad = set(values[name]) - _field_names(sub)
            if bad:
                raise ConfigError(f"unknown [{section}.{name}] field(s): {sorted(bad)}")
            values[name] = sub(**values[name])
    return cls(**values)


def build(data: dict):
    """Return ``(OpticsConfig, ScanPlan, TimingModel)`` from a merged config dict."""
    return tuple(_build(name, data.get(name, {})) for name in SECTIONS)


def resolve(config_path=None, overrides=()) -> tuple:
    data = load_toml(config_path) if config_path else {}
    for item in overrides:
        apply_override(data, item)
    return build(data)
