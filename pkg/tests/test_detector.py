import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spadtwin import detector as det
from spadtwin.sequencer import ProtocolSpec, build_timeline

CFG = det.SpadConfig()


def test_dead_time_saturation():
    assert det.detected_rate(1e20, det.SpadConfig(dark_rate=0, pdp=1, fill_factor=1)) == pytest.approx(20e6, rel=1e-9)


def test_half_rate_at_one_over_dead_time():
    cfg = det.SpadConfig(dark_rate=0, pdp=1, fill_factor=1)
    assert det.detected_rate(20e6, cfg) == pytest.approx(10e6)


def test_dark_only():
    assert det.detected_rate(0.0, CFG) == pytest.approx(100 / (1 + 100 * 50e-9))


@given(a=st.floats(0, 1e10), b=st.floats(0, 1e10))
def test_rate_monotone_and_bounded(a, b):
    ra, rb = det.detected_rate([a, b], CFG)
    assert ra < CFG.max_rate and rb < CFG.max_rate
    if a < b:
        assert ra <= rb


def test_negative_flux_rejected():
    with pytest.raises(ValueError):
        det.detected_rate(-1.0, CFG)


def test_config_validation():
    with pytest.raises(ValueError):
        det.SpadConfig(dead_time=40)
    with pytest.raises(ValueError):
        det.SpadConfig(counters_per_pixel=4)
    with pytest.raises(ValueError):
        det.SpadConfig(pdp=0)


def test_sample_counts_zero_mean():
    counts, flags = det.sample_counts(np.zeros(100), 1.0, 0)
    assert not counts.any() and not flags.any()


def test_sample_counts_mean():
    counts, _ = det.sample_counts(np.full(10_000, 400.0), 1.0, 1)
    assert abs(counts.mean() - 400) < 3 * np.sqrt(400 / 10_000)


def test_sample_counts_clamp():
    count, flag = det.sample_counts(2000.0, 1.0, 0)
    assert count == 511 and flag


def test_exposures():
    assert det.gated_exposure(None, 10_000) == pytest.approx(10e-6)
    gate = [det.GateWindow(0, 4000, 1000)]
    assert det.gated_exposure(gate, 10_000) == pytest.approx(det.gated_exposure(None, 10_000) / 10)
    assert det.gated_exposure(gate, 10_000, illumination=[(0, 3000)]) == 0.0
    assert det.gated_exposure(gate, 10_000, illumination=[(4500, 8000)]) == pytest.approx(0.5e-6)


def test_gates_validated():
    with pytest.raises(ValueError):
        det.check_gates([det.GateWindow(0, 0, 100), det.GateWindow(0, 50, 100)], 1000)
    with pytest.raises(ValueError):
        det.check_gates([det.GateWindow(0, 900, 200)], 1000)
    det.check_gates([det.GateWindow(0, 0, 100), det.GateWindow(1, 50, 100)], 1000)
    with pytest.raises(ValueError):
        det.GateWindow(3, 0, 10)


@pytest.mark.parametrize("n, expected", [(1, 10.40), (2, 20.80), (3, 31.20)])
def test_readout_time(n, expected):
    assert det.frame_readout_time(det.SpadConfig(counters_per_pixel=n)) == pytest.approx(expected, abs=1e-12)


def _timeline():
    return build_timeline(ProtocolSpec("RABI", (0.1,)), 0.1)


def test_dark_frame_mean():
    tl = _timeline()
    frames = [det.acquire_frame(np.zeros(CFG.shape), tl, CFG, 7, i, sequences=10_000) for i in range(5)]
    mean = np.mean([f.counts.mean() for f in frames])
    expected = det.detected_rate(0.0, CFG) * 1e-6 * 10_000
    assert mean == pytest.approx(expected, rel=0.05)


def test_flux_ratio_two_to_one():
    tl = _timeline()
    flux = np.full(CFG.shape, 1e6)
    flux[:, 32:] = 2e6
    f = det.acquire_frame(flux, tl, CFG, 3, 0, sequences=2000)
    ratio = f.counts[0, :, 32:].mean() / f.counts[0, :, :32].mean()
    assert ratio == pytest.approx(2.0, rel=0.03)


def test_dead_time_halves_at_saturation_scale():
    cfg = det.SpadConfig(dark_rate=0)
    incident = 20e6 / (cfg.pdp * cfg.fill_factor)
    naive = cfg.pdp * cfg.fill_factor * incident
    assert det.detected_rate(incident, cfg) == pytest.approx(naive / 2)


def test_frame_seed_independent_of_order():
    tl = _timeline()
    flux = np.full(CFG.shape, 5e6)
    a = det.acquire_frame(flux, tl, CFG, 11, 3)
    det.acquire_frame(flux, tl, CFG, 11, 2)
    b = det.acquire_frame(flux, tl, CFG, 11, 3)
    assert np.array_equal(a.counts, b.counts)


def test_acquire_shape_checked():
    with pytest.raises(ValueError):
        det.acquire_frame(np.zeros((2, 2)), _timeline(), CFG)


def test_frame_record_rejects_overflow():
    with pytest.raises(ValueError):
        det.FrameRecord(np.full((32, 64), 600), 10.0)
