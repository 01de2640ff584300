"""AC field waveforms and the MW phase-modulation law.

All quantities are SI: tesla, hertz, seconds, radians. Gyromagnetic ratio
and Rabi strengths are angular (they carry the 2*pi explicitly).
"""

from __future__ import annotations

import json
import math
from dataclasses import MISSING, asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

GAMMA_NV = 2 * math.pi * 28e9
"""NV electron gyromagnetic ratio, rad s^-1 T^-1."""

ZERO_FIELD_SPLITTING = 2 * math.pi * 2.87e9
"""NV ground-state zero-field splitting D, rad/s."""

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class FieldConfig:
    """Static bias, AC drive and AC response field parameters.

    The field along the NV axis (beyond ``b_dc``) is
    ``b_d*cos(2*pi*f_d*t) + b_s*cos(2*pi*f_d*t - delta)``.
    """

    b_d: float
    f_d: float
    b_s: float = 0.0
    delta: float = 0.0
    b_dc: float = 0.0

    def __post_init__(self):
        if self.b_d < 0:
            raise ValueError(f"b_d must be >= 0, got {self.b_d}")
        if self.b_s < 0:
            raise ValueError(f"b_s must be >= 0, got {self.b_s}")
        if not self.f_d > 0:
            raise ValueError(f"f_d must be > 0, got {self.f_d}")
        object.__setattr__(self, "delta", float(self.delta) % TWO_PI)

    @property
    def omega_d(self) -> float:
        return TWO_PI * self.f_d

    @property
    def period(self) -> float:
        return 1.0 / self.f_d

    def with_(self, **changes) -> FieldConfig:
        return replace(self, **changes)


@dataclass(frozen=True)
class ModulationConfig:
    """MW phase-modulation amplitudes.

    ``b_d_mod`` follows the drive (phase 0), ``b_s_mod`` is the optional
    second term with its own phase ``delta_mod``. Both zero is conventional DD.
    """

    b_d_mod: float = 0.0
    b_s_mod: float = 0.0
    delta_mod: float = 0.0

    def __post_init__(self):
        if self.b_d_mod < 0:
            raise ValueError(f"b_d_mod must be >= 0, got {self.b_d_mod}")
        if self.b_s_mod < 0:
            raise ValueError(f"b_s_mod must be >= 0, got {self.b_s_mod}")

    @classmethod
    def sipht(cls, cfg: FieldConfig, **kwargs) -> ModulationConfig:
        """Modulation matched to the drive amplitude of ``cfg``."""
        return cls(b_d_mod=cfg.b_d, **kwargs)

    def with_(self, **changes) -> ModulationConfig:
        return replace(self, **changes)


def total_ac_field(t, cfg: FieldConfig):
    """Drive plus response field at time(s) ``t``, in tesla."""
    wt = cfg.omega_d * np.asarray(t, dtype=float)
    out = cfg.b_d * np.cos(wt) + cfg.b_s * np.cos(wt - cfg.delta)
    return float(out) if out.ndim == 0 else out


def mw_phase_modulation(t, cfg: FieldConfig, mod: ModulationConfig, gamma: float = GAMMA_NV):
    """Time-dependent MW carrier phase added on top of ``(D - gamma*B_DC)*t``.

    Its time derivative is ``gamma*(b_d_mod*cos(wt) + b_s_mod*cos(wt - delta_mod))``,
    which is what cancels the drive-induced detuning when ``b_d_mod == b_d``.
    """
    w = cfg.omega_d
    wt = w * np.asarray(t, dtype=float)
    out = gamma * (mod.b_d_mod * np.sin(wt) + mod.b_s_mod * np.sin(wt - mod.delta_mod)) / w
    return float(out) if out.ndim == 0 else out


def mw_phase_modulation_rate(t, cfg: FieldConfig, mod: ModulationConfig, gamma: float = GAMMA_NV):
    """d/dt of :func:`mw_phase_modulation`, rad/s."""
    wt = cfg.omega_d * np.asarray(t, dtype=float)
    out = gamma * (mod.b_d_mod * np.cos(wt) + mod.b_s_mod * np.cos(wt - mod.delta_mod))
    return float(out) if out.ndim == 0 else out


# -- JSON config -------------------------------------------------------------

def _from_mapping(cls, data: dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    missing = {f.name for f in fields(cls) if f.default is MISSING} - set(data)
    if missing:
        raise ValueError(f"missing {cls.__name__} keys: {sorted(missing)}")
    return cls(**{k: float(v) for k, v in data.items()})


def field_config_from_dict(data: dict[str, Any]) -> FieldConfig:
    return _from_mapping(FieldConfig, data)


def modulation_from_dict(data: dict[str, Any]) -> ModulationConfig:
    return _from_mapping(ModulationConfig, data)


def config_to_dict(obj) -> dict[str, float]:
    return {k: float(v) for k, v in asdict(obj).items()}


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a JSON run configuration.

    The file holds a ``"field"`` block (FieldConfig keys) and optionally
    ``"modulation"``, ``"sequence"``, ``"readout"``, ``"sweep"`` and
    ``"propagator"`` blocks. Blocks other than field/modulation are returned
    as plain dicts for the caller to interpret.
    """
    with open(path) as fh:
        raw = json.load(fh)
    if "field" not in raw:
        raise ValueError(f"{path}: missing 'field' block")
    out = dict(raw)
    out["field"] = field_config_from_dict(raw["field"])
    out["modulation"] = modulation_from_dict(raw.get("modulation", {}))
    return out


def dump_config(config: dict[str, Any]) -> str:
    """Serialize a config mapping produced by :func:`load_config`."""
    out = {}
    for key, value in config.items():
        if isinstance(value, (FieldConfig, ModulationConfig)):
            out[key] = config_to_dict(value)
        else:
            out[key] = value
    return json.dumps(out, indent=2, sort_keys=True)
