"""Scene geometry and the small value types shared across the package."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml


class ConfigError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


def _vec3(value, name):
    arr = tuple(float(v) for v in value)
    if len(arr) != 3:
        raise ConfigError(f"{name} must have 3 components, got {len(arr)}")
    return arr


@dataclass(frozen=True)
class Scene:
    bs_position: tuple
    ris_position: tuple
    ue_center: tuple
    ue_half_extent: tuple
    ris_rows: int
    ris_cols: int
    spacing_factor: float = 1.0
    rician_factor: float = 10.0
    pathloss_direct: tuple = (32.6, 36.7)
    pathloss_reflected: tuple = (30.0, 22.0)
    noise_power: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "bs_position", _vec3(self.bs_position, "bs_position"))
        object.__setattr__(self, "ris_position", _vec3(self.ris_position, "ris_position"))
        object.__setattr__(self, "ue_center", _vec3(self.ue_center, "ue_center"))
        object.__setattr__(self, "ue_half_extent", _vec3(self.ue_half_extent, "ue_half_extent"))
        object.__setattr__(self, "pathloss_direct", tuple(float(v) for v in self.pathloss_direct))
        object.__setattr__(self, "pathloss_reflected", tuple(float(v) for v in self.pathloss_reflected))
        if min(self.ue_half_extent) < 0:
            raise ConfigError("ue_half_extent must be non-negative")
        if int(self.ris_rows) < 1 or int(self.ris_cols) < 1:
            raise ConfigError("ris_rows and ris_cols must be positive")
        if self.rician_factor < 0:
            raise ConfigError("rician_factor must be >= 0")
        if self.noise_power <= 0:
            raise ConfigError("noise_power must be > 0")
        if len(self.pathloss_direct) != 2 or len(self.pathloss_reflected) != 2:
            raise ConfigError("pathloss models are [a, b] pairs")

    @property
    def n_elements(self) -> int:
        return int(self.ris_rows) * int(self.ris_cols)

    @property
    def bs(self) -> np.ndarray:
        return np.asarray(self.bs_position)

    @property
    def ris(self) -> np.ndarray:
        return np.asarray(self.ris_position)

    @property
    def region_low(self) -> np.ndarray:
        return np.asarray(self.ue_center) - np.asarray(self.ue_half_extent)

    @property
    def region_high(self) -> np.ndarray:
        return np.asarray(self.ue_center) + np.asarray(self.ue_half_extent)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        required = ["bs_position", "ris_position", "ue_center", "ue_half_extent", "ris_rows", "ris_cols"]
        for key in required:
            if key not in d:
                raise ConfigError(f"scene: missing required key '{key}'")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"scene: unknown keys {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def paper_scene(**overrides) -> Scene:
    """Geometry of the reference simulation: 8x8 RIS at the origin."""
    base = dict(
        bs_position=(40.0, -40.0, -10.0),
        ris_position=(0.0, 0.0, 0.0),
        ue_center=(20.0, 0.0, -20.0),
        ue_half_extent=(15.0, 35.0, 0.0),
        ris_rows=8,
        ris_cols=8,
        spacing_factor=1.0,
        rician_factor=10.0,
        pathloss_direct=(32.6, 36.7),
        pathloss_reflected=(30.0, 22.0),
        noise_power=1e-10,
    )
    base.update(overrides)
    return Scene(**base)


def desk_scene(**overrides) -> Scene:
    """Paper geometry with a 4x4 RIS for laptop-scale runs."""
    return paper_scene(**{"ris_rows": 4, "ris_cols": 4, **overrides})


def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_dict(yaml.safe_load(fh))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(yaml.safe_dump(scene.to_dict(), sort_keys=False))


@dataclass(frozen=True)
class AnglePair:
    """Direction cosines (sin(az)cos(el), sin(el)); scalars or broadcastable arrays."""

    sin_az_cos_el: object
    sin_el: object


@dataclass
class ChannelRealization:
    h_d: complex
    h_r: np.ndarray
    g_r: np.ndarray
    v_r: np.ndarray = field(default=None)

    def __post_init__(self):
        self.h_r = np.asarray(self.h_r, dtype=complex)
        self.g_r = np.asarray(self.g_r, dtype=complex)
        if self.v_r is None:
            self.v_r = self.h_r * self.g_r


@dataclass
class RISConfig:
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=complex)
        dev = np.max(np.abs(np.abs(self.theta) - 1.0)) if self.theta.size else 0.0
        if dev > 1e-9:
            raise ValueError(f"RIS configuration violates unit modulus (max deviation {dev:.3e})")

    @classmethod
    def from_phases(cls, phases) -> "RISConfig":
        return cls(np.exp(1j * np.asarray(phases, dtype=float)))

    @classmethod
    def random(cls, n: int, gen: np.random.Generator) -> "RISConfig":
        return cls.from_phases(gen.uniform(0.0, 2 * np.pi, size=n))


@dataclass(frozen=True)
class PilotParams:
    power: float
    frames: int
    pilot_symbol: complex = 1 + 0j

    def __post_init__(self):
        if self.power <= 0:
            raise ConfigError("pilot power must be > 0")
        if int(self.frames) < 1:
            raise ConfigError("frames must be >= 1")
        if abs(abs(self.pilot_symbol) - 1.0) > 1e-12:
            raise ConfigError("pilot symbol must have unit modulus")
