import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spadtwin.sequencer import (COMPOSITE_ANGLE, Channel, ChannelEvent, EchoPrep, Protocol, ProtocolSpec,
                                PulseTimeline, TimelineError, Transition, build_timeline, sweep_schedule,
                                validate_timeline, with_sweep)


def _phase_mod(p):
    p = p % (2 * math.pi)
    return min(p, 2 * math.pi - p)


def test_rabi_zero_length_drive():
    tl = build_timeline(ProtocolSpec("RABI", (0.0,)), 0.0)
    mw = tl.mw_events()
    assert len(mw) == 1 and mw[0].duration == 0
    assert tl.camera_gates() and tl.by_channel(Channel.LASER2)
    assert validate_timeline(tl) == []


def test_sq_final_phase_integer_cycles():
    tl = build_timeline(ProtocolSpec("SQ_RAMSEY", (1.0,), nu=3.0), 1.0)
    assert _phase_mod(tl.final_phase()) == pytest.approx(0.0, abs=1e-9)


def test_sq_final_phase_quarter_cycle():
    tl = build_timeline(ProtocolSpec("SQ_RAMSEY", (0.25,), nu=1.0), 0.25)
    assert tl.final_phase() == pytest.approx(math.pi / 2)


def test_echo_has_three_alternating_pi_pulses():
    tl = build_timeline(ProtocolSpec("DQ_ECHO", (1.0,), nu=1.0), 1.0)
    pis = [e for e in tl.mw_events() if e.label.startswith("echo pi")]
    assert [e.transition for e in pis] == [Transition.MINUS, Transition.PLUS, Transition.MINUS]
    assert all(b.start >= a.end for a, b in zip(pis, pis[1:]))


def test_echo_composite_prep():
    spec = ProtocolSpec("DQ_ECHO", (1.0,), echo_prep=EchoPrep.COMPOSITE)
    tl = build_timeline(spec, 1.0)
    rot = [e for e in tl.mw_events() if "rotation" in e.label]
    assert len(rot) == 2
    assert rot[0].duration == pytest.approx(round(COMPOSITE_ANGLE / math.pi * 100 / 2) * 2)
    assert COMPOSITE_ANGLE == pytest.approx(2 * math.acos(math.sqrt(2 / 3)))


def test_echo_waits_are_symmetric():
    tl = build_timeline(ProtocolSpec("DQ_ECHO", (2.0,)), 2.0)
    mw = tl.mw_events()
    pis = [e for e in mw if e.label.startswith("echo pi")]
    prep_end = max(e.end for e in mw if "prep" in e.label and "unprep" not in e.label)
    unprep_start = min(e.start for e in mw if "unprep" in e.label)
    assert pis[0].start - prep_end == pytest.approx(1000)
    assert unprep_start - pis[-1].end == pytest.approx(1000)


def test_dq_uses_simultaneous_pairs():
    tl = build_timeline(ProtocolSpec("DQ_RAMSEY", (0.5,)), 0.5)
    mw = tl.mw_events()
    assert len(mw) == 4
    starts = {}
    for e in mw:
        starts.setdefault(e.start, set()).add(e.transition)
    assert all(v == {Transition.MINUS, Transition.PLUS} for v in starts.values())


def test_validate_well_formed():
    tl = build_timeline(ProtocolSpec("RABI", (0.5,)), 0.5)
    assert validate_timeline(tl) == []


def test_validate_overlap():
    events = (ChannelEvent(Channel.MW_A, 0, 100, "a"), ChannelEvent(Channel.MW_A, 50, 100, "b"))
    diags = validate_timeline(PulseTimeline(events, 1000, 0.0))
    assert [d.kind for d in diags] == ["overlap"]


def test_validate_alignment():
    events = (ChannelEvent(Channel.MW_A, 3, 10, "odd"),)
    diags = validate_timeline(PulseTimeline(events, 1000, 0.0), resolution=2)
    assert [d.kind for d in diags] == ["alignment"]


def test_validate_duration_and_gate():
    events = (ChannelEvent(Channel.CAMERA_GATE, 900, 200, "gate"),)
    kinds = {d.kind for d in validate_timeline(PulseTimeline(events, 1000, 0.0))}
    assert kinds == {"duration", "gate"}


def test_readout_collision_raises():
    spec = ProtocolSpec("RABI", (2.0,), readout_start=4500.0)
    with pytest.raises(TimelineError, match="collides"):
        build_timeline(spec, 2.0)


def test_schedule():
    sweep = tuple(np.round(np.linspace(0.04, 2.0, 50), 9))
    sched = sweep_schedule(ProtocolSpec("RABI", sweep), 1000)
    assert len(sched) == 50 and sched.repetitions == 1000
    durations = [tl.mw_on_time() for tl in sched.timelines]
    assert all(b > a for a, b in zip(durations, durations[1:]))


def test_empty_sweep_rejected():
    with pytest.raises(ValueError):
        ProtocolSpec("RABI", ())
    with pytest.raises(ValueError):
        ProtocolSpec("RABI", (0.2, 0.1))


def test_spec_dict_round_trip():
    spec = ProtocolSpec.from_dict({"kind": "SQ_RAMSEY", "sweep_range": [0, 1, 11], "nu": 3.0, "pi_time": 0.12})
    assert len(spec.sweep) == 11 and spec.pi_time[Transition.PLUS] == 0.12
    again = ProtocolSpec.from_dict(spec.to_dict())
    assert again == spec
    assert with_sweep(spec, (0.5,)).sweep == (0.5,)


@given(T=st.floats(0, 5), kind=st.sampled_from(list(Protocol)))
def test_built_timelines_are_valid(T, kind):
    spec = ProtocolSpec(kind, (T,), nu=2.0)
    tl = build_timeline(spec, T)
    assert validate_timeline(tl, spec.resolution) == []
    assert tl.total_duration >= spec.min_frame
    assert len(tl.camera_gates()) == 1


def test_table_lists_every_event():
    tl = build_timeline(ProtocolSpec("DQ_ECHO", (1.0,)), 1.0)
    assert len(tl.to_table().splitlines()) == len(tl.events) + 2
