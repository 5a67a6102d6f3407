"""SPAD array model: detection efficiency, dead time, gated counters, readout.

Counting is modelled with Poisson draws around the dead-time corrected mean
rate (non-paralyzable detector), then clamped to the 9-bit counter range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lfsr

COUNTER_MAX = 511
NEAR_SATURATION = 460  # counts above ~90% of full scale are flagged


@dataclass(frozen=True)
class SpadConfig:
    rows: int = 32
    cols: int = 64
    dead_time: float = 50.0  # ns
    pdp: float = 0.35
    dark_rate: float = 100.0  # cps
    fill_factor: float = 0.0314
    counter_bits: int = 9
    counters_per_pixel: int = 1
    readout_time_per_counter: float = 10.40  # us
    min_integration: float = 10.0  # us
    pitch: float = 150.0  # um
    active_diameter: float = 30.0  # um

    def __post_init__(self):
        if self.dead_time < 50.0:
            raise ValueError("dead_time must be >= 50 ns")
        if not 0 < self.pdp <= 1:
            raise ValueError("pdp must be in (0, 1]")
        if self.counters_per_pixel not in (1, 2, 3):
            raise ValueError("counters_per_pixel must be 1, 2 or 3")
        if self.counter_bits != lfsr.BITS:
            raise ValueError("only 9-bit counters are modelled")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def max_rate(self) -> float:
        """Saturated count rate ``1/dead_time`` in cps."""
        return 1e9 / self.dead_time


MICROLENS_FILL_FACTOR = 0.78


@dataclass(frozen=True)
class GateWindow:
    counter_index: int
    start: float  # ns from frame start
    duration: float  # ns

    def __post_init__(self):
        if not 0 <= self.counter_index <= 2:
            raise ValueError("counter_index must be 0..2")
        if self.start < 0:
            raise ValueError("gate start must be >= 0")
        if not self.duration > 0:
            raise ValueError("gate duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class FrameRecord:
    counts: np.ndarray  # (counters, rows, cols) uint16
    integration_time: float  # us
    gates: list = field(default_factory=list)
    frame_index: int = 0
    saturation: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim == 2:
            self.counts = self.counts[None]
        if self.counts.max(initial=0) > COUNTER_MAX:
            raise ValueError("counts exceed the 9-bit counter range")
        if self.saturation is None:
            self.saturation = self.counts >= NEAR_SATURATION


def detected_rate(incident_flux, cfg: SpadConfig):
    """Mean detected count rate (cps) for an incident photon flux (cps)."""
    incident_flux = np.asarray(incident_flux, dtype=float)
    if np.any(incident_flux < 0):
        raise ValueError("incident flux must be >= 0")
    r_in = cfg.pdp * cfg.fill_factor * incident_flux + cfg.dark_rate
    return r_in / (1.0 + r_in * cfg.dead_time * 1e-9)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_counts(mean_rate, exposure, seed=None):
    """Draw counter values for ``mean_rate`` (cps) over ``exposure`` (s).

    Returns ``(counts, flags)``.  Values are clamped at 511; ``flags`` marks
    clamped and near-full-scale values.
    """
    if np.any(np.asarray(exposure) < 0):
        raise ValueError("exposure must be >= 0")
    lam = np.asarray(mean_rate, dtype=float) * exposure
    raw = _rng(seed).poisson(lam)
    counts = np.minimum(raw, COUNTER_MAX)
    flags = raw >= NEAR_SATURATION
    if counts.ndim == 0:
        return int(counts), bool(flags)
    return counts.astype(np.uint16), flags


def _merge(intervals):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return out


def check_gates(gates: Sequence[GateWindow], integration_ns: float):
    """Raise ``ValueError`` for gates outside the frame or overlapping on a counter."""
    by_counter = {}
    for g in gates:
        if g.end > integration_ns + 1e-9:
            raise ValueError(f"gate {g} extends past the {integration_ns} ns integration")
        by_counter.setdefault(g.counter_index, []).append(g)
    for idx, lst in by_counter.items():
        lst = sorted(lst, key=lambda g: g.start)
        for a, b in zip(lst, lst[1:]):
            if b.start < a.end:
                raise ValueError(f"overlapping gate windows on counter {idx}: {a}, {b}")


def gated_exposure(gates, integration_ns, illumination=None, counter_index=0):
    """Effective exposure in seconds for one counter.

    ``gates`` of ``None`` means free-running: the counter is open for the whole
    integration period.  ``illumination`` is a list of ``(start, end)`` ns
    intervals during which the photon flux is on; ``None`` means constant flux.
    """
    if gates is None:
        windows = [(0.0, float(integration_ns))]
    else:
        check_gates(gates, integration_ns)
        windows = [(g.start, g.end) for g in gates if g.counter_index == counter_index]
    if illumination is None:
        return sum(b - a for a, b in windows) * 1e-9
    lit = _merge(illumination)
    total = 0.0
    for a, b in windows:
        for la, lb in lit:
            total += max(0.0, min(b, lb) - max(a, la))
    return total * 1e-9


def gate_duration(gates, integration_ns, counter_index=0):
    if gates is None:
        return integration_ns * 1e-9
    return sum(g.duration for g in gates if g.counter_index == counter_index) * 1e-9


def frame_readout_time(cfg: SpadConfig) -> float:
    """Array readout time in us; proportional to the counters in use."""
    return cfg.counters_per_pixel * cfg.readout_time_per_counter


def frame_seed(master_seed: int, frame_index: int) -> np.random.Generator:
    # one independent stream per frame, so frames can be produced in any order
    return np.random.default_rng(np.random.SeedSequence([master_seed, frame_index]))


def expected_counts(flux, cfg: SpadConfig, gates, integration_ns, illumination=None):
    """Mean counts per counter, shape ``(counters, *flux.shape)``."""
    flux = np.asarray(flux, dtype=float)
    on = detected_rate(flux, cfg)
    dark = detected_rate(0.0, cfg)
    out = np.empty((cfg.counters_per_pixel,) + flux.shape)
    for k in range(cfg.counters_per_pixel):
        lit = gated_exposure(gates, integration_ns, illumination, k)
        total = gate_duration(gates, integration_ns, k)
        out[k] = on * lit + dark * (total - lit)
    return out


def acquire_frame(flux, timeline, cfg: SpadConfig, seed=0, frame_index=0, sequences=1) -> FrameRecord:
    """Simulate one global-shutter frame.

    ``flux`` is the per-pixel incident photon flux (cps) while the readout laser
    is on.  ``timeline`` supplies ``camera_gates()``, ``laser_intervals()`` and
    ``frame_integration()`` (ns); every pixel shares the same gate objects.
    The frame integrates ``sequences`` back-to-back repeats of the timeline.
    """
    flux = np.asarray(flux, dtype=float)
    if flux.shape != cfg.shape:
        raise ValueError(f"flux shape {flux.shape} != detector shape {cfg.shape}")
    gates = timeline.camera_gates()
    if not gates:
        raise ValueError("timeline has no camera gate")
    integration_ns = timeline.frame_integration()
    mean = sequences * expected_counts(flux, cfg, gates, integration_ns, timeline.laser_intervals())
    rng = frame_seed(seed, frame_index) if not isinstance(seed, np.random.Generator) else seed
    counts, flags = sample_counts(mean, 1.0, rng)
    return FrameRecord(counts=counts, integration_time=sequences * integration_ns * 1e-3,
                       gates=list(gates), frame_index=frame_index, saturation=flags)
