"""Object-plane scenes and their projection onto detector pixels.

Coordinates are micrometres in the object plane.  A scene is a set of field
functions ``f(x, y)`` sampled on a regular quadrature grid; pixel fluxes are
midpoint-rule integrals of emitter brightness weighted by the probability
that a photon from each cell, blurred by a Gaussian PSF, lands on the pixel's
active area.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.special import ndtr
from scipy.stats import ncx2

from .detector import SpadConfig
from .model import LocalEnvironment, SpinParams

ENV_FIELDS = ("dBz", "dD", "mw_amp", "spin_density", "ionization_dose")
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
PSF_SUPPORT = 4.0  # PSF sigmas beyond the footprint edge included in quadrature


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class BeamRole(str, enum.Enum):
    FOCUSED = "FOCUSED"
    BROAD = "BROAD"


@dataclass(frozen=True)
class BeamProfile:
    center: tuple = (0.0, 0.0)
    diameter: float = 30.0  # 1/e^2 diameter, um
    power_density: float = 1.0
    role: BeamRole = BeamRole.FOCUSED

    def __post_init__(self):
        object.__setattr__(self, "role", BeamRole(self.role))
        if not self.diameter > 0:
            raise ValueError("beam diameter must be positive")

    @classmethod
    def focused(cls, center=(0.0, 0.0), power_density=1.0):
        return cls(tuple(center), 30.0, power_density, BeamRole.FOCUSED)

    @classmethod
    def broad(cls, center=(0.0, 0.0), power_density=1.0, diameter=250.0):
        return cls(tuple(center), diameter, power_density, BeamRole.BROAD)


def beam_intensity(beam: BeamProfile, x, y):
    r2 = (np.asarray(x) - beam.center[0]) ** 2 + (np.asarray(y) - beam.center[1]) ** 2
    return beam.power_density * np.exp(-8.0 * r2 / beam.diameter ** 2)


@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    def __call__(self, x, y):
        return np.full(np.broadcast(x, y).shape, float(self.value))


@dataclass(frozen=True)
class Ramp:
    """``value + gradient . ((x, y) - origin)``."""

    value: float = 0.0
    gradient: tuple = (0.0, 0.0)
    origin: tuple = (0.0, 0.0)

    def __call__(self, x, y):
        gx, gy = self.gradient
        return self.value + gx * (np.asarray(x) - self.origin[0]) + gy * (np.asarray(y) - self.origin[1])


@dataclass(frozen=True)
class Gaussian:
    """A beam-shaped bump: ``base + amplitude*exp(-8 r^2 / diameter^2)``."""

    center: tuple = (0.0, 0.0)
    diameter: float = 30.0
    amplitude: float = 1.0
    base: float = 0.0

    def __call__(self, x, y):
        r2 = (np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2
        return self.base + self.amplitude * np.exp(-8.0 * r2 / self.diameter ** 2)


@dataclass(frozen=True)
class Disk:
    center: tuple = (0.0, 0.0)
    radius: float = 15.0
    inside: float = 1.0
    outside: float = 0.0

    def __call__(self, x, y):
        r2 = (np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2
        return np.where(r2 <= self.radius ** 2, float(self.inside), float(self.outside))


@dataclass(frozen=True)
class Raster:
    """Bilinear interpolation of ``values[iy, ix]`` sampled at ``origin + spacing*(ix, iy)``."""

    values: np.ndarray
    origin: tuple = (0.0, 0.0)
    spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __call__(self, x, y):
        ny, nx = self.values.shape
        ys = self.origin[1] + self.spacing * np.arange(ny)
        xs = self.origin[0] + self.spacing * np.arange(nx)
        interp = RegularGridInterpolator((ys, xs), self.values, bounds_error=False, fill_value=None)
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return interp(np.stack([y.ravel(), x.ravel()], axis=-1)).reshape(x.shape)


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def __call__(self, x, y):
        out = 0.0
        for t in self.terms:
            out = out + t(x, y)
        return np.broadcast_to(out, np.broadcast(x, y).shape).astype(float)


@dataclass(frozen=True)
class Scaled:
    """``scale * a(x, y) * b(x, y)``; used for brightness under an excitation beam."""

    a: object
    b: object = None
    scale: float = 1.0

    def __call__(self, x, y):
        out = self.scale * self.a(x, y)
        if self.b is not None:
            out = out * self.b(x, y)
        return out


@dataclass(frozen=True)
class BeamField:
    beam: BeamProfile
    scale: float = 1.0

    def __call__(self, x, y):
        return self.scale * beam_intensity(self.beam, x, y)


# ---------------------------------------------------------------------------
# scene and optics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scene:
    extent: tuple  # (xmin, xmax, ymin, ymax), um
    spacing: float  # quadrature grid step, um
    fields: dict = field(default_factory=dict)
    beams: tuple = ()
    spin: SpinParams = field(default_factory=SpinParams)
    photodiode_region: tuple | None = None  # extent integrated by the bulk channel
    photodiode_spacing: float = 1.0

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("scene spacing must be positive")
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError("scene extent must be non-empty")
        object.__setattr__(self, "fields", dict(self.fields))
        if "brightness" not in self.fields:
            raise ValueError("scene needs a 'brightness' field")
        unknown = set(self.fields) - set(ENV_FIELDS) - {"brightness"}
        if unknown:
            raise ValueError(f"unknown scene fields: {sorted(unknown)}")

    def field_values(self, name, x, y):
        f = self.fields.get(name)
        if f is None:
            return np.zeros(np.broadcast(x, y).shape)
        return np.asarray(f(x, y), dtype=float)

    def sample(self, x, y) -> dict:
        """All fields at points ``(x, y)``; negative physical fields are rejected."""
        out = {name: self.field_values(name, x, y) for name in ("brightness",) + ENV_FIELDS}
        for name in ("brightness", "mw_amp", "spin_density", "ionization_dose"):
            if np.any(out[name] < 0):
                raise ValueError(f"scene field {name!r} is negative somewhere")
        return out

    def cell_centers(self, extent=None, spacing=None):
        x0, x1, y0, y1 = self.extent if extent is None else extent
        h = self.spacing if spacing is None else spacing
        xs = x0 + h * (np.arange(int(np.floor((x1 - x0) / h + 1e-9))) + 0.5)
        ys = y0 + h * (np.arange(int(np.floor((y1 - y0) / h + 1e-9))) + 0.5)
        return xs, ys

    def with_fields(self, **fields):
        new = dict(self.fields)
        new.update(fields)
        return replace(self, fields=new)


@dataclass(frozen=True)
class OpticsConfig:
    magnification: float = 50.0
    numerical_aperture: float = 0.5
    psf_fwhm: float = 0.65  # um, object plane
    collection_efficiency: float = 1.0
    camera_attenuation: float = 0.02
    microlens: bool = False

    def __post_init__(self):
        if not self.magnification > 0:
            raise ValueError("magnification must be positive")
        if not 0 < self.camera_attenuation <= 1:
            raise ValueError("camera_attenuation must be in (0, 1]")
        if not self.psf_fwhm > 0:
            raise ValueError("psf_fwhm must be positive")
        if not 0 < self.collection_efficiency <= 1:
            raise ValueError("collection_efficiency must be in (0, 1]")

    @property
    def efficiency(self) -> float:
        return self.collection_efficiency * self.camera_attenuation

    @property
    def psf_sigma(self) -> float:
        return self.psf_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class Footprint:
    center: tuple
    diameter: float  # disk diameter, or square side with a microlens
    square: bool = False

    @property
    def area(self) -> float:
        if self.square:
            return self.diameter ** 2
        return np.pi * self.diameter ** 2 / 4


def pixel_spacing(optics: OpticsConfig, cfg: SpadConfig = SpadConfig()) -> float:
    return cfg.pitch / optics.magnification


def pixel_footprint(optics: OpticsConfig, pixel, stage_offset=(0.0, 0.0),
                    cfg: SpadConfig = SpadConfig()) -> Footprint:
    """Object-plane image of pixel ``(row, col)``; column runs along x."""
    row, col = pixel
    if not (0 <= row < cfg.rows and 0 <= col < cfg.cols):
        raise IndexError(f"pixel {pixel} outside the {cfg.rows}x{cfg.cols} array")
    step = pixel_spacing(optics, cfg)
    center = (stage_offset[0] + step * col, stage_offset[1] + step * row)
    if optics.microlens:
        return Footprint(center, step, square=True)
    return Footprint(center, cfg.active_diameter / optics.magnification)


def footprint_kernel(fp: Footprint, sigma: float, dx, dy):
    """Probability that a photon emitted at offset ``(dx, dy)`` from the footprint
    centre lands inside the footprint after Gaussian blur ``sigma``."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if fp.square:
        h = fp.diameter / 2
        px = ndtr((h - dx) / sigma) - ndtr((-h - dx) / sigma)
        py = ndtr((h - dy) / sigma) - ndtr((-h - dy) / sigma)
        return px * py
    radius = fp.diameter / 2
    return ncx2.cdf((radius / sigma) ** 2, 2, (dx ** 2 + dy ** 2) / sigma ** 2)


def _support_radius(fp: Footprint, sigma):
    half = fp.diameter / 2 * (np.sqrt(2) if fp.square else 1.0)
    return half + PSF_SUPPORT * sigma


def _check_spacing(scene: Scene, optics: OpticsConfig):
    if scene.spacing > optics.psf_fwhm / 2 + 1e-12:
        raise ValueError(f"scene spacing {scene.spacing} um exceeds psf_fwhm/2 = {optics.psf_fwhm / 2} um")


def _local_cells(scene: Scene, fp: Footprint, sigma):
    """Global grid indices ``(ix, iy)`` of scene cells within the kernel support."""
    x0, x1, y0, y1 = scene.extent
    h = scene.spacing
    nx = int(np.floor((x1 - x0) / h + 1e-9))
    ny = int(np.floor((y1 - y0) / h + 1e-9))
    rad = _support_radius(fp, sigma)
    cx, cy = fp.center
    ix = np.arange(max(0, int(np.floor((cx - rad - x0) / h))), min(nx, int(np.ceil((cx + rad - x0) / h)) + 1))
    iy = np.arange(max(0, int(np.floor((cy - rad - y0) / h))), min(ny, int(np.ceil((cy + rad - y0) / h)) + 1))
    IX, IY = np.meshgrid(ix, iy)
    return IX.ravel(), IY.ravel(), nx


@dataclass
class PixelWeights:
    """Sparse quadrature weights from scene cells to pixels.

    ``matrix[p, k]`` is the photon flux (cps) contributed to pixel ``p`` by
    cell ``k`` at unit spin signal; ``x``/``y`` are the cell centres.
    """

    matrix: sparse.csr_matrix
    x: np.ndarray
    y: np.ndarray
    shape: tuple
    in_field: np.ndarray

    @property
    def flux(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).reshape(self.shape)


def pixel_weights(scene: Scene, optics: OpticsConfig, stage_offset=(0.0, 0.0),
                  cfg: SpadConfig = SpadConfig(), pixels=None) -> PixelWeights:
    """Quadrature weights for every pixel (or the listed ``(row, col)`` pixels)."""
    _check_spacing(scene, optics)
    sigma = optics.psf_sigma
    h = scene.spacing
    if pixels is None:
        pixels = [(r, c) for r in range(cfg.rows) for c in range(cfg.cols)]
        shape = cfg.shape
    else:
        shape = (len(pixels),)
    rows, cols, vals, flat_ids = [], [], [], []
    nx = None
    for p, pix in enumerate(pixels):
        fp = pixel_footprint(optics, pix, stage_offset, cfg)
        ix, iy, nx = _local_cells(scene, fp, sigma)
        if ix.size == 0:
            continue
        x = scene.extent[0] + h * (ix + 0.5)
        y = scene.extent[2] + h * (iy + 0.5)
        k = footprint_kernel(fp, sigma, x - fp.center[0], y - fp.center[1])
        keep = k > 1e-12
        rows.append(np.full(keep.sum(), p))
        flat_ids.append(iy[keep].astype(np.int64) * nx + ix[keep])
        vals.append(k[keep] * h * h)
    if not rows:
        empty = sparse.csr_matrix((len(pixels), 0))
        return PixelWeights(empty, np.zeros(0), np.zeros(0), shape, np.zeros(shape, bool))
    rows = np.concatenate(rows)
    flat_ids = np.concatenate(flat_ids)
    vals = np.concatenate(vals)
    uniq, cell_idx = np.unique(flat_ids, return_inverse=True)
    x = scene.extent[0] + h * (uniq % nx + 0.5)
    y = scene.extent[2] + h * (uniq // nx + 0.5)
    brightness = scene.field_values("brightness", x, y)
    if np.any(brightness < 0):
        raise ValueError("brightness must be >= 0")
    vals = vals * brightness[cell_idx] * optics.efficiency
    mat = sparse.csr_matrix((vals, (rows, cell_idx)), shape=(len(pixels), uniq.size))
    in_field = np.zeros(len(pixels), bool)
    in_field[np.unique(rows)] = True
    return PixelWeights(mat, x, y, shape, in_field.reshape(shape))


@dataclass(frozen=True)
class FluxSample:
    flux: float
    in_field: bool


def collect_flux(scene: Scene, optics: OpticsConfig, pixel, stage_offset=(0.0, 0.0),
                 cfg: SpadConfig = SpadConfig()) -> FluxSample:
    """Photon flux (cps) arriving on one pixel's active area."""
    w = pixel_weights(scene, optics, stage_offset, cfg, pixels=[pixel])
    return FluxSample(float(w.matrix.sum()), bool(w.in_field[0]))


def environment_at(scene: Scene, optics: OpticsConfig, pixel, stage_offset=(0.0, 0.0),
                   cfg: SpadConfig = SpadConfig()) -> LocalEnvironment:
    """Brightness-weighted mean environment seen by one pixel."""
    w = pixel_weights(scene, optics, stage_offset, cfg, pixels=[pixel])
    total = w.matrix.sum()
    if not w.in_field[0] or total <= 0:
        raise ValueError(f"pixel {pixel} sees no emitters")
    weights = np.asarray(w.matrix.todense()).ravel() / total
    vals = scene.sample(w.x, w.y)
    return LocalEnvironment(**{k: float(weights @ vals[k]) for k in ENV_FIELDS})


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def _pair(v):
    return tuple(float(a) for a in v)


def field_from_dict(d, beams=None, base_dir="."):
    """Build a field from its JSON description (see docs/scene_schema.md)."""
    if isinstance(d, (int, float)):
        return Constant(float(d))
    if isinstance(d, list):
        return Sum(tuple(field_from_dict(t, beams, base_dir) for t in d))
    kind = d.get("type")
    if kind == "constant":
        return Constant(float(d["value"]))
    if kind == "ramp":
        return Ramp(float(d.get("value", 0.0)), _pair(d.get("gradient", (0, 0))), _pair(d.get("origin", (0, 0))))
    if kind == "gaussian":
        return Gaussian(_pair(d["center"]), float(d["diameter"]), float(d.get("amplitude", 1.0)),
                        float(d.get("base", 0.0)))
    if kind == "disk":
        return Disk(_pair(d["center"]), float(d["radius"]), float(d.get("inside", 1.0)),
                    float(d.get("outside", 0.0)))
    if kind == "raster":
        vals = d["values"]
        if isinstance(vals, str):
            vals = np.load(os.path.join(base_dir, vals))
        return Raster(np.asarray(vals, float), _pair(d.get("origin", (0, 0))), float(d.get("spacing", 1.0)))
    if kind == "beam":
        return BeamField(beams[d["beam"]], float(d.get("scale", 1.0)))
    if kind == "product":
        return Scaled(field_from_dict(d["a"], beams, base_dir),
                      field_from_dict(d["b"], beams, base_dir) if "b" in d else None,
                      float(d.get("scale", 1.0)))
    raise ValueError(f"unknown field type {kind!r}")


def scene_from_dict(d: dict, base_dir=".") -> Scene:
    beams = {}
    for name, b in d.get("beams", {}).items():
        beams[name] = BeamProfile(_pair(b.get("center", (0, 0))), float(b["diameter"]),
                                  float(b.get("power_density", 1.0)), b.get("role", "FOCUSED"))
    fields = {name: field_from_dict(v, beams, base_dir) for name, v in d["fields"].items()}
    spin = SpinParams(**d.get("spin", {}))
    pd_region = d.get("photodiode_region")
    return Scene(extent=tuple(float(v) for v in d["extent_um"]), spacing=float(d["spacing_um"]),
                 fields=fields, beams=tuple(beams.values()), spin=spin,
                 photodiode_region=tuple(pd_region) if pd_region else None,
                 photodiode_spacing=float(d.get("photodiode_spacing_um", 1.0)))


def load_scene(path) -> Scene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh), base_dir=os.path.dirname(os.path.abspath(path)))
