"""Run configuration files and the shipped experiment presets.

A run configuration is a JSON document (schema in docs/config_schema.md)::

    {"scene": {...} | "scene.json", "optics": {...}, "spad": {...},
     "protocol": {...}, "pose": {...}, "repetitions": 100,
     "sequences_per_frame": 1000, "seed": 0}

Presets are plain dictionaries in the same format, so ``spadtwin simulate
--config rabi-50x`` and a file holding the preset dictionary are equivalent.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, fields

from . import __version__
from .detector import SpadConfig
from .framestore import StagePose
from .optics import OpticsConfig, Scene, scene_from_dict
from .sequencer import ProtocolSpec

TOP_LEVEL = {"scene", "optics", "spad", "protocol", "pose", "repetitions", "sequences_per_frame", "seed",
             "name", "notes"}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the offending file, ``field`` the key."""

    def __init__(self, path, field, message):
        self.path, self.field = path, field
        super().__init__(f"{path}: {field}: {message}")


@dataclass
class RunConfig:
    scene: Scene
    optics: OpticsConfig
    spad: SpadConfig
    protocol: ProtocolSpec
    pose: StagePose
    repetitions: int
    sequences_per_frame: int
    seed: int
    source: dict  # the resolved dictionary, scene inlined
    path: str = "<preset>"

    @property
    def run_id(self) -> str:
        return config_hash(self.source)


def canonical_json(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def config_hash(d) -> str:
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()


def _build(cls, d, path, name):
    if not isinstance(d, dict):
        raise ConfigError(path, name, "expected an object")
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError(path, f"{name}.{key}", "unknown field")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, name, str(exc)) from None


def _positive_int(d, key, path, default):
    v = d.get(key, default)
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(path, key, f"must be a positive integer, got {v!r}")
    return v


def resolve(d: dict, path="<preset>") -> dict:
    """Inline a referenced scene file so the dictionary is self-contained."""
    d = copy.deepcopy(d)
    scene = d.get("scene")
    if isinstance(scene, str):
        scene_path = os.path.join(os.path.dirname(os.path.abspath(path)), scene)
        if not os.path.exists(scene_path):
            raise ConfigError(path, "scene", f"file not found: {scene_path}")
        with open(scene_path) as fh:
            d["scene"] = json.load(fh)
    return d


def from_dict(d: dict, path="<preset>", seed=None) -> RunConfig:
    d = resolve(d, path)
    unknown = set(d) - TOP_LEVEL
    if unknown:
        raise ConfigError(path, sorted(unknown)[0], "unknown field")
    for key in ("scene", "protocol"):
        if key not in d:
            raise ConfigError(path, key, "required")
    if seed is not None:
        d["seed"] = int(seed)
    d.setdefault("seed", 0)
    if not isinstance(d["seed"], int) or not 0 <= d["seed"] < 2 ** 64:
        raise ConfigError(path, "seed", "must be an unsigned 64-bit integer")
    try:
        scene = scene_from_dict(d["scene"], base_dir=os.path.dirname(os.path.abspath(path)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, "scene", str(exc)) from None
    try:
        protocol = ProtocolSpec.from_dict(d["protocol"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, "protocol", str(exc)) from None
    return RunConfig(
        scene=scene,
        optics=_build(OpticsConfig, d.get("optics", {}), path, "optics"),
        spad=_build(SpadConfig, d.get("spad", {}), path, "spad"),
        protocol=protocol,
        pose=_build(StagePose, d.get("pose", {}), path, "pose"),
        repetitions=_positive_int(d, "repetitions", path, 100),
        sequences_per_frame=_positive_int(d, "sequences_per_frame", path, 1),
        seed=d["seed"], source=d, path=path)


def load(name_or_path, seed=None) -> RunConfig:
    """Load a preset by name or a JSON config file."""
    if name_or_path in PRESETS:
        return from_dict(preset(name_or_path), f"<preset {name_or_path}>", seed)
    if not os.path.exists(name_or_path):
        raise ConfigError(name_or_path, "-", "no such file or preset")
    with open(name_or_path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(name_or_path, f"line {exc.lineno}", exc.msg) from None
    return from_dict(d, name_or_path, seed)


def manifest(cfg: RunConfig, **extra) -> dict:
    import numpy
    import scipy
    m = {"run_id": cfg.run_id, "seed": cfg.seed, "config": cfg.source,
         "versions": {"spadtwin": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__}}
    m.update(extra)
    return m


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

# 50x: 3 um object-plane pixels, 192 x 96 um field
FIELD_50X = (-6.0, 198.0, -6.0, 102.0)
FIELD_10X = (-30.0, 990.0, -30.0, 510.0)
BRIGHTNESS = 3e9  # photons/s/um^2 reaching the objective; ~20 Mcps incident per pixel at 50x
ILLUMINATED_50X = (-200.0, 400.0, -100.0, 200.0)
B_RAMP = 0.286 / 192.0  # G/um along x


def _sweep(start, stop, n):
    return [round(float(v), 9) for v in [start + (stop - start) * k / (n - 1) for k in range(n)]]


def _scene(extent, fields, spin=None, spacing=0.3, pd_spacing=1.0, pd_region=None):
    d = {"extent_um": list(extent), "spacing_um": spacing, "photodiode_spacing_um": pd_spacing,
         "fields": dict({"brightness": BRIGHTNESS}, **fields)}
    if pd_region:
        d["photodiode_region"] = list(pd_region)
    if spin:
        d["spin"] = spin
    return d


def _rabi_50x():
    # MW amplitude rising from 5.4 to 5.9 MHz across the 50x field; the bulk
    # channel sees the whole illuminated area, beyond the camera field
    mw = {"type": "ramp", "value": 5.4, "gradient": [0.5 / 189.0, 0.0]}
    return {"name": "rabi-50x",
            "scene": _scene(FIELD_50X, {"mw_amp": mw}, pd_spacing=2.0, pd_region=ILLUMINATED_50X),
            "optics": {"magnification": 50.0},
            "protocol": {"kind": "RABI", "sweep": _sweep(0.04, 2.0, 50)},
            "repetitions": 100, "sequences_per_frame": 1000}


def _rabi_10x():
    # loop antenna: Rabi frequency peaks at the loop and falls off radially
    mw = {"type": "gaussian", "center": [480.0, 240.0], "diameter": 1400.0, "amplitude": 3.0, "base": 4.0}
    return {"name": "rabi-10x",
            "scene": _scene(FIELD_10X, {"mw_amp": mw}, spacing=1.0, pd_spacing=4.0),
            "optics": {"magnification": 10.0, "numerical_aperture": 0.3, "psf_fwhm": 2.0},
            "protocol": {"kind": "RABI", "sweep": _sweep(0.02, 1.5, 60)},
            "repetitions": 100, "sequences_per_frame": 40}


def _ramsey(kind, sweep, nu, reps, spf=1000):
    return {"name": kind.lower().replace("_", "-"),
            "scene": _scene(FIELD_50X, {"dBz": {"type": "ramp", "value": 0.0, "gradient": [B_RAMP, 0.0]}},
                            pd_spacing=2.0, pd_region=ILLUMINATED_50X),
            "optics": {"magnification": 50.0},
            "protocol": {"kind": kind, "sweep": sweep, "nu": nu},
            "repetitions": reps, "sequences_per_frame": spf}


def _density():
    # focused beam: larger spin density and ionization dose inside a 30 um disk
    disk = {"type": "disk", "center": [96.0, 48.0], "radius": 15.0}
    return {"name": "density",
            "scene": _scene(FIELD_50X, {"spin_density": dict(disk, inside=2.0),
                                        "ionization_dose": dict(disk, inside=0.7)}),
            "optics": {"magnification": 50.0},
            "protocol": {"kind": "SQ_RAMSEY", "sweep": _sweep(0.0, 1.2, 61), "nu": 4.0},
            "repetitions": 400, "sequences_per_frame": 1000}


PRESETS = {
    "rabi-50x": _rabi_50x,
    "rabi-10x": _rabi_10x,
    "sq-ramsey": lambda: _ramsey("SQ_RAMSEY", _sweep(0.0, 1.2, 61), 4.0, 100),
    "dq-ramsey": lambda: _ramsey("DQ_RAMSEY", _sweep(0.0, 1.2, 61), 4.0, 100),
    "dq-echo": lambda: _ramsey("DQ_ECHO", _sweep(0.0, 4.0, 81), 1.0, 170),
    "density": _density,
}


def preset(name) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


__all__ = ["ConfigError", "RunConfig", "PRESETS", "preset", "load", "from_dict", "manifest", "config_hash"]
