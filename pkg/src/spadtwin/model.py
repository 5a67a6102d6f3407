"""Closed-form NV spin-1 signal models.

All frequencies are in MHz (cycles per microsecond) and all times in
microseconds, so a phase accumulated over ``t`` at frequency ``f`` is
``2*pi*f*t``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class RamseyMode(str, enum.Enum):
    SQ = "SQ"
    DQ = "DQ"
    DQ_ECHO = "DQ_ECHO"


@dataclass(frozen=True)
class NVConstants:
    D0: float = 2870.0  # MHz
    gamma_e: float = 2.8  # MHz/G
    dD_dT: float = 0.067  # MHz/K
    echo_factor: float = 1.0  # phase prefactor k of the DQ echo: f = nu + k*dD

    def __post_init__(self):
        if not self.D0 > 0:
            raise ValueError("D0 must be positive")
        if not self.gamma_e > 0:
            raise ValueError("gamma_e must be positive")


DEFAULT_CONSTANTS = NVConstants()


@dataclass(frozen=True)
class LocalEnvironment:
    dBz: float = 0.0
    dD: float = 0.0
    mw_amp: float = 0.0
    spin_density: float = 0.0
    ionization_dose: float = 0.0

    def __post_init__(self):
        if self.mw_amp < 0:
            raise ValueError("mw_amp must be >= 0")
        if self.spin_density < 0:
            raise ValueError("spin_density must be >= 0")
        if self.ionization_dose < 0:
            raise ValueError("ionization_dose must be >= 0")


@dataclass(frozen=True)
class SignalModel:
    """Decaying sinusoid ``c0 + c*cos(2*pi*omega*t + phi)*exp(-t/tau)``."""

    c0: float = 1.0
    c: float = 0.0
    omega: float = 0.0
    phi: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if abs(self.c) > abs(self.c0):
            raise ValueError("|c| must not exceed c0")

    def __call__(self, t):
        return decaying_sinusoid(t, self.c0, self.c, self.omega, self.phi, self.tau)

    def as_array(self) -> np.ndarray:
        return np.array([self.c0, self.c, self.omega, self.phi, self.tau])


def decaying_sinusoid(t, c0, c, omega, phi, tau):
    t = np.asarray(t, dtype=float)
    return c0 + c * np.cos(2 * np.pi * omega * t + phi) * np.exp(-t / tau)


def transition_frequencies(consts: NVConstants, Bz, dD=0.0):
    """Return the ``(|0>-|-1>, |0>-|+1>)`` transition frequencies in MHz."""
    centre = consts.D0 + dD
    split = consts.gamma_e * Bz
    return centre - split, centre + split


def effective_rabi(mw_amp, detuning):
    """Generalized Rabi frequency ``sqrt(mw_amp**2 + detuning**2)``."""
    mw_amp = np.asarray(mw_amp, dtype=float)
    if np.any(mw_amp < 0):
        raise ValueError("mw_amp must be >= 0")
    return np.hypot(mw_amp, detuning)


def rabi_population(t, mw_amp, detuning=0.0, tau=np.inf):
    """Population left in |0> after driving for ``t`` microseconds.

    Off resonance the two-level result applies: the oscillation runs at the
    effective Rabi frequency with its depth reduced by ``(mw_amp/eff)**2``.
    The oscillating part decays with ``exp(-t/tau)``.
    """
    t = np.asarray(t, dtype=float)
    mw_amp = np.asarray(mw_amp, dtype=float)
    eff = effective_rabi(mw_amp, detuning)
    with np.errstate(invalid="ignore", divide="ignore"):
        depth = np.where(eff > 0, (mw_amp / np.where(eff > 0, eff, 1.0)) ** 2, 0.0)
    envelope = np.exp(-t / tau)
    return 1.0 - 0.5 * depth + 0.5 * depth * np.cos(2 * np.pi * eff * t) * envelope


def ramsey_frequency(mode, env: LocalEnvironment, nu, consts: NVConstants = DEFAULT_CONSTANTS):
    """Fringe frequency of a Ramsey-type protocol, MHz.

    Conventions: SQ ``nu + dD - gamma*dBz``, DQ ``nu + 2*gamma*dBz``,
    DQ echo ``nu + k*dD``.
    """
    return ramsey_offset(mode, env.dD, env.dBz, consts) + nu


def ramsey_offset(mode, dD, dBz, consts: NVConstants = DEFAULT_CONSTANTS):
    """Environment-dependent part of the fringe frequency (MHz); broadcasts."""
    mode = RamseyMode(mode)
    if mode is RamseyMode.SQ:
        return dD - consts.gamma_e * dBz
    if mode is RamseyMode.DQ:
        return 2.0 * consts.gamma_e * dBz
    return consts.echo_factor * dD


def ramsey_signal(t, mode, env: LocalEnvironment, nu, model: SignalModel,
                  consts: NVConstants = DEFAULT_CONSTANTS):
    """Ramsey-type fringe using ``model``'s baseline, contrast, phase and decay."""
    f = ramsey_frequency(mode, env, nu, consts)
    return decaying_sinusoid(t, model.c0, model.c, f, model.phi, model.tau)


def dephasing_rate(spin_density, base_rate, coupling):
    """``1/T2*`` in 1/us, affine in the local spin density."""
    spin_density = np.asarray(spin_density, dtype=float)
    if np.any(spin_density < 0) or base_rate < 0:
        raise ValueError("spin_density and base_rate must be >= 0")
    if not coupling > 0:
        raise ValueError("coupling must be positive")
    return base_rate + coupling * spin_density


def contrast_under_ionization(c_bulk, dose, dose_scale=1.0):
    """Spin contrast remaining after an ionizing dose, ``c_bulk*exp(-dose/d0)``."""
    dose = np.asarray(dose, dtype=float)
    if not 0 <= c_bulk <= 1:
        raise ValueError("c_bulk must be in [0, 1]")
    if np.any(dose < 0):
        raise ValueError("dose must be >= 0")
    return c_bulk * np.exp(-dose / dose_scale)


@dataclass(frozen=True)
class SpinParams:
    """Per-scene spin physics shared by every cell.

    Each protocol has its own decay time.  The SQ Ramsey decay follows the
    local spin density through :func:`dephasing_rate`; the others are scalars.
    """

    contrast: float = 0.1  # bulk fluorescence contrast between |0> and |+-1>
    dose_scale: float = 1.0
    t2_rho: float = 1.5  # us, driven (Rabi) decay
    sq_base_rate: float = 1 / 0.35  # 1/us
    sq_coupling: float = 1.0  # 1/us per unit density
    t2star_dq: float = 0.3  # us
    t2_echo: float = 2.0  # us

    def __post_init__(self):
        if not 0 <= self.contrast <= 1:
            raise ValueError("contrast must be in [0, 1]")
        for name in ("dose_scale", "t2_rho", "t2star_dq", "t2_echo", "sq_coupling"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sq_base_rate < 0:
            raise ValueError("sq_base_rate must be >= 0")
