"""Forward simulation: scene -> per-cell spin signal -> pixel flux -> counts.

Each compiled timeline is interpreted with the closed-form models: the Rabi
drive time is read from the MW events, Ramsey-type sequences use the sweep
value as free evolution and the phase of the final pulse as the reference
ramp.  Pixel signals are flux-weighted sums over the scene cells under each
pixel, so spatial averaging inside a pixel is kept.
"""

from __future__ import annotations

import logging

import numpy as np

from . import model as nv
from .detector import NEAR_SATURATION, SpadConfig, acquire_frame, expected_counts
from .fitting import SweepStack
from .framestore import StagePose
from .optics import OpticsConfig, Scene, pixel_spacing, pixel_weights
from .sequencer import Protocol, ProtocolSpec, Transition, sweep_schedule

log = logging.getLogger(__name__)

RAMSEY_MODE = {Protocol.SQ_RAMSEY: nv.RamseyMode.SQ, Protocol.DQ_RAMSEY: nv.RamseyMode.DQ,
               Protocol.DQ_ECHO: nv.RamseyMode.DQ_ECHO}


def cell_signal(timeline, cells: dict, spin: nv.SpinParams, consts=nv.DEFAULT_CONSTANTS,
                carrier_detuning=0.0):
    """Normalized fluorescence (1 = all in |0>) of each cell after ``timeline``."""
    contrast = nv.contrast_under_ionization(spin.contrast, cells["ionization_dose"], spin.dose_scale)
    if timeline.protocol is Protocol.RABI:
        drive = sum(e.duration for e in timeline.mw_events() if e.transition is Transition.MINUS) * 1e-3
        detuning = carrier_detuning + nv.ramsey_offset("SQ", cells["dD"], cells["dBz"], consts)
        p0 = nv.rabi_population(drive, cells["mw_amp"], detuning, spin.t2_rho)
        return 1.0 - contrast * (1.0 - p0)
    mode = RAMSEY_MODE[timeline.protocol]
    if mode is nv.RamseyMode.SQ:
        tau = 1.0 / nv.dephasing_rate(cells["spin_density"], spin.sq_base_rate, spin.sq_coupling)
    elif mode is nv.RamseyMode.DQ:
        tau = spin.t2star_dq
    else:
        tau = spin.t2_echo
    T = timeline.sweep_value
    offset = nv.ramsey_offset(mode, cells["dD"], cells["dBz"], consts)
    fringe = np.cos(2 * np.pi * offset * T + timeline.final_phase()) * np.exp(-T / tau)
    return 1.0 - 0.5 * contrast + 0.5 * contrast * fringe


def photodiode_series(scene: Scene, spec: ProtocolSpec, consts=nv.DEFAULT_CONSTANTS,
                      carrier_detuning=0.0, chunk=200_000):
    """Brightness-weighted spin signal integrated over the object plane.

    Emulates a bulk detector: no pixels, no PSF, noiseless.  A dark scene
    gives NaN.
    """
    region = scene.photodiode_region or scene.extent
    xs, ys = scene.cell_centers(region, scene.photodiode_spacing)
    X, Y = np.meshgrid(xs, ys)
    X, Y = X.ravel(), Y.ravel()
    schedule = sweep_schedule(spec)
    num = np.zeros(len(schedule))
    den = 0.0
    for s in range(0, X.size, chunk):
        cells = scene.sample(X[s:s + chunk], Y[s:s + chunk])
        b = cells["brightness"]
        den += b.sum()
        for k, tl in enumerate(schedule.timelines):
            num[k] += b @ cell_signal(tl, cells, scene.spin, consts, carrier_detuning)
    if den <= 0:
        return np.full(len(schedule), np.nan)  # dark scene: no bulk signal
    return num / den


class PixelModel:
    """Precomputed quadrature for one stage pose; evaluates mean pixel fluxes."""

    def __init__(self, scene: Scene, optics: OpticsConfig, cfg: SpadConfig = SpadConfig(),
                 pose: StagePose = StagePose(), consts=nv.DEFAULT_CONSTANTS):
        self.scene, self.optics, self.cfg, self.pose, self.consts = scene, optics, cfg, pose, consts
        self.weights = pixel_weights(scene, optics, (pose.x, pose.y), cfg)
        self.cells = scene.sample(self.weights.x, self.weights.y)

    @property
    def flux(self) -> np.ndarray:
        """Pixel flux (cps) with every cell in |0>."""
        return self.weights.flux

    def signal_flux(self, timeline) -> np.ndarray:
        s = cell_signal(timeline, self.cells, self.scene.spin, self.consts, self.pose.detuning)
        return (self.weights.matrix @ s).reshape(self.weights.shape)

    def geometry(self) -> dict:
        # origin is relative to the stage position, which the pose records
        return {"pixel_spacing": pixel_spacing(self.optics, self.cfg), "origin": (0.0, 0.0),
                "magnification": self.optics.magnification, "bin": 1,
                "pose": {"x": self.pose.x, "y": self.pose.y, "set_id": self.pose.set_id,
                         "detuning": self.pose.detuning}}


def _point_rng(seed, pose, k):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(pose.set_id), int(k) + 1]))


def simulate_sweep(scene: Scene, optics: OpticsConfig, spec: ProtocolSpec, cfg: SpadConfig = SpadConfig(),
                   repetitions=1000, seed=0, pose: StagePose = StagePose(), photodiode=True,
                   sequences_per_frame=1, consts=nv.DEFAULT_CONSTANTS, noiseless=False) -> SweepStack:
    """Accumulated counts for a whole sweep.

    Each sweep point sums ``repetitions`` frames of ``sequences_per_frame``
    sequences.  Because a sum of Poisson draws is Poisson, the accumulated
    counts are drawn in one step; this equals frame-by-frame acquisition as
    long as no single frame clamps at the counter limit, which is checked.
    """
    pm = PixelModel(scene, optics, cfg, pose, consts)
    schedule = sweep_schedule(spec, repetitions)
    n = len(schedule)
    counts = np.zeros((n,) + cfg.shape, np.int64 if not noiseless else float)
    ref_tl = schedule.timelines[0]
    worst = 0.0

    def frame_mean(flux, tl):
        m = expected_counts(flux, cfg, tl.camera_gates(), tl.frame_integration(), tl.laser_intervals())[0]
        return m * sequences_per_frame

    for k, tl in enumerate(schedule.timelines):
        mean = frame_mean(pm.signal_flux(tl), tl)
        worst = max(worst, float(mean.max()))
        total = mean * repetitions
        counts[k] = total if noiseless else _point_rng(seed, pose, k).poisson(total)
    ref_mean = frame_mean(pm.flux, ref_tl)
    worst = max(worst, float(ref_mean.max()))
    ref_total = ref_mean * repetitions
    reference = ref_total if noiseless else _point_rng(seed, pose, -1).poisson(ref_total)
    if worst >= NEAR_SATURATION:
        log.warning("per-frame mean %.0f counts is near the 9-bit limit; accumulated counts are biased", worst)
    meta = pm.geometry()
    meta.update(protocol=spec.kind.value, nu=spec.nu, seed=int(seed), repetitions=int(repetitions),
                max_frame_mean=worst)
    pd = photodiode_series(scene, spec, consts, pose.detuning) if photodiode else None
    return SweepStack(np.array(spec.sweep), counts, reference, repetitions, pd, meta)


def simulate_frames(scene: Scene, optics: OpticsConfig, spec: ProtocolSpec, cfg: SpadConfig = SpadConfig(),
                    repetitions=10, seed=0, pose: StagePose = StagePose(), consts=nv.DEFAULT_CONSTANTS,
                    sequences_per_frame=1, model: PixelModel | None = None):
    """Yield individual :class:`FrameRecord` objects.

    Layout: ``repetitions`` reference frames (laser only, no MW), then
    ``repetitions`` frames for each sweep point in order.  Frame ``i`` draws
    from its own random stream keyed by ``(seed, i)``.
    """
    pm = model or PixelModel(scene, optics, cfg, pose, consts)
    spf = sequences_per_frame
    schedule = sweep_schedule(spec, repetitions)
    index = 0
    ref_tl = schedule.timelines[0]
    for _ in range(repetitions):
        yield acquire_frame(pm.flux, ref_tl, cfg, seed, index, spf)
        index += 1
    for tl in schedule.timelines:
        flux = pm.signal_flux(tl)
        for _ in range(repetitions):
            yield acquire_frame(flux, tl, cfg, seed, index, spf)
            index += 1
