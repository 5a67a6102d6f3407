import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spadtwin import model as nv


def test_transition_frequencies_zero_field():
    assert nv.transition_frequencies(nv.DEFAULT_CONSTANTS, 0.0) == (2870.0, 2870.0)


def test_transition_frequencies_100_gauss():
    lo, hi = nv.transition_frequencies(nv.DEFAULT_CONSTANTS, 100.0)
    assert lo == pytest.approx(2590.0)
    assert hi == pytest.approx(3150.0)


def test_transition_frequencies_shift():
    lo, hi = nv.transition_frequencies(nv.DEFAULT_CONSTANTS, 0.0, 0.01)
    assert lo == pytest.approx(2870.01) and hi == pytest.approx(2870.01)


def test_constants_validate():
    with pytest.raises(ValueError):
        nv.NVConstants(D0=0)
    with pytest.raises(ValueError):
        nv.NVConstants(gamma_e=-1)


@pytest.mark.parametrize("amp, det, expected", [(5, 0, 5), (3, 4, 5), (5.4, 0, 5.4), (5.9, 0, 5.9)])
def test_effective_rabi(amp, det, expected):
    assert nv.effective_rabi(amp, det) == pytest.approx(expected)


def test_effective_rabi_negative_amplitude():
    with pytest.raises(ValueError):
        nv.effective_rabi(-1.0, 0.0)


def test_rabi_population_oracles():
    assert nv.rabi_population(0.0, 5.0, 1.3, 0.5) == pytest.approx(1.0)
    assert nv.rabi_population(0.1, 5.0) == pytest.approx(0.0, abs=1e-12)
    assert nv.rabi_population(0.2, 5.0, 0.0, 0.79) == pytest.approx((1 + math.exp(-0.2 / 0.79)) / 2)
    # quoted as about 0.889; the exact value is 0.88817
    assert nv.rabi_population(0.2, 5.0, 0.0, 0.79) == pytest.approx(0.889, abs=1e-3)


def test_rabi_population_detuned_depth():
    # off resonance the minimum population is 1 - (amp/eff)^2
    amp, det = 3.0, 4.0
    t_half = 0.5 / nv.effective_rabi(amp, det)
    assert nv.rabi_population(t_half, amp, det) == pytest.approx(1 - (3 / 5) ** 2)


@given(t=st.floats(0, 10), amp=st.floats(0, 20), det=st.floats(-20, 20), tau=st.floats(0.01, 100))
def test_rabi_population_is_probability(t, amp, det, tau):
    p = nv.rabi_population(t, amp, det, tau)
    assert -1e-12 <= p <= 1 + 1e-12


def test_ramsey_laws():
    env = nv.LocalEnvironment(dBz=0.1, dD=0.02)
    g = nv.DEFAULT_CONSTANTS.gamma_e
    assert nv.ramsey_frequency("SQ", env, 3.0) == pytest.approx(3.0 + 0.02 - g * 0.1)
    assert nv.ramsey_frequency("DQ", env, 3.0) == pytest.approx(3.0 + 2 * g * 0.1)
    assert nv.ramsey_frequency("DQ_ECHO", env, 3.0) == pytest.approx(3.02)


def test_sq_gradient_across_field():
    # 0.286 G across the field shifts the SQ fringe by about 0.80 MHz
    a = nv.ramsey_offset("SQ", 0.0, 0.0)
    b = nv.ramsey_offset("SQ", 0.0, 0.286)
    assert abs(b - a) == pytest.approx(0.8008)


@given(dbz=st.floats(-10, 10))
def test_dq_slope_is_twice_sq(dbz):
    sq = nv.ramsey_offset("SQ", 0.0, dbz)
    dq = nv.ramsey_offset("DQ", 0.0, dbz)
    assert dq == pytest.approx(-2 * sq, abs=1e-12)


@given(dbz=st.floats(-10, 10))
def test_echo_ignores_field(dbz):
    env = nv.LocalEnvironment(dBz=dbz, dD=0.0)
    assert nv.ramsey_frequency("DQ_ECHO", env, 1.7) == 1.7


def test_ramsey_signal_uses_model_baseline():
    env = nv.LocalEnvironment()
    m = nv.SignalModel(c0=1.0, c=0.05, phi=0.0, tau=0.35)
    assert nv.ramsey_signal(0.0, "SQ", env, 3.0, m) == pytest.approx(1.05)


def test_dephasing_rate():
    assert 1 / nv.dephasing_rate(0.0, 1 / 0.35, 1.0) == pytest.approx(0.35)
    assert nv.dephasing_rate(4.0, 0.0, 2.0) == 2 * nv.dephasing_rate(2.0, 0.0, 2.0)
    rho = (1 / 0.19 - 1 / 0.35) / 1.0
    assert 1 / nv.dephasing_rate(rho, 1 / 0.35, 1.0) == pytest.approx(0.19)
    with pytest.raises(ValueError):
        nv.dephasing_rate(-1.0, 1.0, 1.0)


def test_contrast_under_ionization():
    assert nv.contrast_under_ionization(0.1, 0.0) == pytest.approx(0.1)
    assert nv.contrast_under_ionization(0.1, 1e6) == pytest.approx(0.0)
    assert nv.contrast_under_ionization(0.1, 0.5) > nv.contrast_under_ionization(0.1, 0.6)
    with pytest.raises(ValueError):
        nv.contrast_under_ionization(1.5, 0.0)


def test_signal_model_validation():
    with pytest.raises(ValueError):
        nv.SignalModel(tau=0.0)
    with pytest.raises(ValueError):
        nv.SignalModel(c0=0.1, c=0.2)
    m = nv.SignalModel(1.0, 0.1, 2.0, 0.3, 1.0)
    assert np.allclose(m.as_array(), [1.0, 0.1, 2.0, 0.3, 1.0])
    assert m(0.0) == pytest.approx(1.0 + 0.1 * math.cos(0.3))


def test_environment_validation():
    with pytest.raises(ValueError):
        nv.LocalEnvironment(mw_amp=-1)
    with pytest.raises(ValueError):
        nv.LocalEnvironment(spin_density=-1)
