"""Run configuration: one TOML file with a section per module.

Precedence, lowest first: built-in defaults, the ``--config`` file,
``--set section.key=value`` overrides, then dedicated command-line flags
such as ``--seed``. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .odmr import SpinSystemConfig
from .ratemodel import RateConfig
from .thermal import DEFAULT_THERMAL, ThermalModel

__all__ = ["RunConfig", "DEFAULTS", "load_config", "parse_override", "save_rate_config",
           "load_rate_config"]

DEFAULTS: dict[str, dict] = {
    "run": {"seed": 0},
    "rates": RateConfig().to_dict(),
    "trace": {
        "t_end": 5.0e-6,
        "n_samples": 1001,
        "pump": "square",  # square | constant | off
        "pulse_start": 0.0,
        "pulse_end": 2.0e-6,
        "initial": "G0",  # G0 | thermal | steady
    },
    "phase": {
        "channel": "ir",  # ir | visible
        "f_min": 1.0e6,
        "f_max": 1.0e8,
        "n_freq": 20,
        "mod_depth": 0.05,
        # Pump rate for scans; kept weak so the ground populations do not
        # follow the modulation. 0 uses rates.pump_rate.
        "pump_rate": 1.0e5,
        "n_periods": 20,
        "samples_per_period": 64,
        "noise_rad": 0.0,
        "model": "auto",  # auto | single | cascade
        "tau1_fixed": 7.8e-9,  # 0 frees tau1 in cascade fits
        "delay": 0.0,
        "fit_delay": False,
    },
    "thermal": {
        **DEFAULT_THERMAL.to_dict(),
        "t_min": 4.4,
        "t_max": 450.0,
        "n_points": 100,
        "structure": "free",  # free | fixed
        "n_modes": 1,
        "energies": [0.043, 0.137],
        "cap": 6,
    },
    "odmr": {
        **SpinSystemConfig().to_dict(),
        "f_min": 2.6e9,
        "f_max": 3.15e9,
        "n_points": 2201,
        "weights": [],
    },
    "polarization": {
        "upper": "E",
        "lower": "A1",
        "geometry": "in_plane",  # in_plane | along_beam | custom
        "phi_nv_deg": 90.0,
        "z": [1.0, 0.0, 0.0],
        "k": [0.0, 0.0, 1.0],
        "reference": [1.0, 0.0, 0.0],
        "floor": 0.2,
        "n_theta": 72,
        "noise": 0.0,
    },
}

# Keys that are accepted but absent from the defaults.
OPTIONAL_KEYS = {"phase": {"frequencies"}, "thermal": {"temperatures"}}


@dataclass
class RunConfig:
    sections: dict[str, dict] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getitem__(self, name: str) -> dict:
        return self.sections[name]

    def set(self, dotted: str, value) -> None:
        section, _, key = dotted.partition(".")
        _check_key(section, key)
        self.sections[section][key] = value

    def update(self, data: dict) -> None:
        for section, values in data.items():
            if not isinstance(values, dict):
                raise ValueError(f"top-level key {section!r} must be a section")
            for key, value in values.items():
                self.set(f"{section}.{key}", value)

    def rate_config(self) -> RateConfig:
        return RateConfig.from_dict(self.sections["rates"])

    def thermal_model(self) -> ThermalModel:
        t = self.sections["thermal"]
        return ThermalModel.from_dict({"tau0": t["tau0"], "modes": t["modes"]})

    def spin_config(self) -> SpinSystemConfig:
        o = self.sections["odmr"]
        keys = ("D", "E", "gamma", "B", "linewidth", "contrast_vis", "contrast_ir")
        return SpinSystemConfig.from_dict({k: o[k] for k in keys})

    def to_toml(self) -> str:
        return tomli_w.dumps(self.sections)


def _check_key(section: str, key: str) -> None:
    if section not in DEFAULTS:
        raise ValueError(f"unknown config section {section!r}")
    if key not in DEFAULTS[section] and key not in OPTIONAL_KEYS.get(section, ()):
        raise ValueError(f"unknown config key {section}.{key}")


def parse_override(text: str) -> tuple[str, object]:
    """Split ``section.key=value``; the value is parsed as a TOML literal."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form section.key=value")
    key, _, raw = text.partition("=")
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def load_config(path: str | Path | None = None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        with open(path, "rb") as fh:
            cfg.update(tomllib.load(fh))
    for item in overrides:
        cfg.set(*parse_override(item))
    return cfg


def save_rate_config(config: RateConfig, path: str | Path) -> None:
    """Write a rate configuration as a ``[rates]`` TOML section."""
    Path(path).write_text(tomli_w.dumps({"rates": config.to_dict()}))


def load_rate_config(path: str | Path) -> RateConfig:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - {"rates"}
    if unknown:
        raise ValueError(f"unexpected sections in rate file: {sorted(unknown)}")
    return RateConfig.from_dict(data.get("rates", {}))
