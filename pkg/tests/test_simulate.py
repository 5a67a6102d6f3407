import logging

import numpy as np
import pytest

from spadtwin.detector import SpadConfig
from spadtwin.framestore import StagePose
from spadtwin.optics import Constant, Scene
from spadtwin.sequencer import ProtocolSpec
from spadtwin.simulate import photodiode_series, simulate_frames, simulate_sweep

SHORT = ProtocolSpec("RABI", (0.04, 0.08, 0.12))


def test_noiseless_sweep_shape_and_reference(uniform_scene, optics50):
    st = simulate_sweep(uniform_scene, optics50, SHORT, noiseless=True, repetitions=10)
    assert st.counts.shape == (3, 32, 64) and st.reference.shape == (32, 64)
    # the signal never exceeds the all-bright reference
    assert np.all(st.counts <= st.reference * (1 + 1e-12))
    assert st.meta["protocol"] == "RABI" and st.meta["repetitions"] == 10


def test_sweep_is_deterministic(uniform_scene, optics50):
    a = simulate_sweep(uniform_scene, optics50, SHORT, repetitions=5, seed=11)
    b = simulate_sweep(uniform_scene, optics50, SHORT, repetitions=5, seed=11)
    c = simulate_sweep(uniform_scene, optics50, SHORT, repetitions=5, seed=12)
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.reference, b.reference)
    assert not np.array_equal(a.counts, c.counts)


def test_pose_set_id_changes_stream(uniform_scene, optics50):
    a = simulate_sweep(uniform_scene, optics50, SHORT, repetitions=5, pose=StagePose(set_id=0))
    b = simulate_sweep(uniform_scene, optics50, SHORT, repetitions=5, pose=StagePose(set_id=1))
    assert not np.array_equal(a.counts, b.counts)


def test_near_saturation_warns(uniform_scene, optics50, caplog):
    with caplog.at_level(logging.WARNING):
        simulate_sweep(uniform_scene, optics50, SHORT, repetitions=1, sequences_per_frame=100_000,
                       photodiode=False)
    assert "9-bit" in caplog.text


def test_dark_scene_gives_zero_counts(optics50):
    dark = Scene((-6, 198, -6, 102), 0.3, {"brightness": Constant(0.0)})
    st = simulate_sweep(dark, optics50, SHORT, repetitions=3, photodiode=False, cfg=SpadConfig(dark_rate=0.0))
    assert st.counts.sum() == 0 and st.reference.sum() == 0


def test_frames_layout(uniform_scene, optics50):
    frames = list(simulate_frames(uniform_scene, optics50, SHORT, repetitions=2, seed=3, sequences_per_frame=50))
    assert len(frames) == 2 * (1 + 3)
    assert [f.frame_index for f in frames] == list(range(8))
    assert all(f.counts.shape == (1, 32, 64) for f in frames)
    again = list(simulate_frames(uniform_scene, optics50, SHORT, repetitions=2, seed=3, sequences_per_frame=50))
    assert all(np.array_equal(x.counts, y.counts) for x, y in zip(frames, again))


def test_frame_sums_match_sweep_mean(uniform_scene, optics50):
    reps, spf = 20, 200
    frames = list(simulate_frames(uniform_scene, optics50, SHORT, repetitions=reps, sequences_per_frame=spf))
    ref = sum(f.counts[0].astype(np.int64) for f in frames[:reps])
    mean = simulate_sweep(uniform_scene, optics50, SHORT, repetitions=reps, sequences_per_frame=spf,
                          noiseless=True, photodiode=False).reference
    assert ref.sum() / mean.sum() == pytest.approx(1.0, abs=3 / np.sqrt(mean.sum()) + 1e-3)


def test_photodiode_is_normalized(uniform_scene):
    y = photodiode_series(uniform_scene, SHORT)
    assert np.all((y > 0) & (y <= 1))
