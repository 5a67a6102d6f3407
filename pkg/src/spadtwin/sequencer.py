"""Compile sensing protocols into clock-aligned multi-channel pulse timelines.

Times inside a timeline are integer-valued nanoseconds; sweep values are in
microseconds.  MW amplitudes are expressed as the Rabi frequency they drive
(MHz) and pulses are square.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .detector import GateWindow


class Channel(str, enum.Enum):
    LASER1 = "LASER1"
    LASER2 = "LASER2"
    MW_A = "MW_A"
    MW_B = "MW_B"
    CAMERA_GATE = "CAMERA_GATE"
    AUX_GATE = "AUX_GATE"


class Transition(str, enum.Enum):
    MINUS = "MINUS"
    PLUS = "PLUS"


class Protocol(str, enum.Enum):
    RABI = "RABI"
    SQ_RAMSEY = "SQ_RAMSEY"
    DQ_RAMSEY = "DQ_RAMSEY"
    DQ_ECHO = "DQ_ECHO"


class EchoPrep(str, enum.Enum):
    SIMULTANEOUS = "SIMULTANEOUS"
    COMPOSITE = "COMPOSITE"


MW_CHANNEL = {Transition.MINUS: Channel.MW_A, Transition.PLUS: Channel.MW_B}
LASER_CHANNELS = (Channel.LASER1, Channel.LASER2)
GATE_COUNTER = {Channel.CAMERA_GATE: 0, Channel.AUX_GATE: 1}

# rotation on the second transition that leaves |0> with half the population
COMPOSITE_ANGLE = 2 * math.acos(math.sqrt(2 / 3))


class TimelineError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelEvent:
    channel: Channel
    start: float  # ns
    duration: float  # ns
    label: str = ""
    transition: Transition | None = None
    amplitude: float = 0.0  # Rabi frequency, MHz
    phase: float = 0.0  # rad

    def __post_init__(self):
        if self.start < 0 or self.duration < 0:
            raise ValueError(f"negative time in event {self.label!r}")

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def is_mw(self) -> bool:
        return self.channel in (Channel.MW_A, Channel.MW_B)


@dataclass(frozen=True)
class PulseTimeline:
    events: tuple
    total_duration: float  # ns
    sweep_value: float  # us
    protocol: Protocol = Protocol.RABI

    def by_channel(self, channel):
        return [e for e in self.events if e.channel == channel]

    def mw_events(self):
        return [e for e in self.events if e.is_mw]

    def camera_gates(self):
        return [GateWindow(GATE_COUNTER[e.channel], e.start, e.duration)
                for e in self.events if e.channel in GATE_COUNTER]

    def laser_intervals(self):
        return [(e.start, e.end) for e in self.events if e.channel in LASER_CHANNELS]

    def frame_integration(self) -> float:
        return self.total_duration

    def mw_on_time(self) -> float:
        return sum(e.duration for e in self.mw_events())

    def final_phase(self) -> float:
        mw = self.mw_events()
        return mw[-1].phase if mw else 0.0

    def to_table(self) -> str:
        """Human-readable event table, one event per line."""
        lines = [f"# protocol={self.protocol.value} sweep_value_us={self.sweep_value:g} "
                 f"total_ns={self.total_duration:g}",
                 f"{'start_ns':>10} {'dur_ns':>9} {'channel':<12} {'transition':<10} "
                 f"{'amp_MHz':>8} {'phase_rad':>10}  label"]
        for e in self.events:
            tr = e.transition.value if e.transition else "-"
            lines.append(f"{e.start:10.0f} {e.duration:9.0f} {e.channel.value:<12} {tr:<10} "
                         f"{e.amplitude:8.3f} {e.phase:10.6f}  {e.label}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ProtocolSpec:
    kind: Protocol
    sweep: tuple  # us, strictly increasing
    nu: float = 0.0  # MHz
    pi_time: dict = field(default_factory=lambda: {Transition.MINUS: 0.1, Transition.PLUS: 0.1})  # us
    echo_prep: EchoPrep = EchoPrep.SIMULTANEOUS
    resolution: float = 2.0  # ns
    init_duration: float = 3000.0  # ns
    readout_duration: float = 3000.0  # ns
    gate_duration: float = 1000.0  # ns
    settle: float = 1000.0  # ns between init laser and first MW pulse
    readout_delay: float = 100.0  # ns between last MW pulse and readout laser
    readout_start: float | None = None  # fixed readout position, ns
    min_frame: float = 10000.0  # ns
    init_laser: Channel = Channel.LASER2
    readout_laser: Channel = Channel.LASER2

    def __post_init__(self):
        object.__setattr__(self, "kind", Protocol(self.kind))
        object.__setattr__(self, "echo_prep", EchoPrep(self.echo_prep))
        object.__setattr__(self, "sweep", tuple(float(t) for t in self.sweep))
        object.__setattr__(self, "pi_time", {Transition(k): float(v) for k, v in self.pi_time.items()})
        if not self.sweep:
            raise ValueError("sweep must not be empty")
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ValueError("sweep must be strictly increasing")
        if min(self.sweep) < 0:
            raise ValueError("sweep values must be >= 0")
        for tr in Transition:
            if not self.pi_time.get(tr, 0) > 0:
                raise ValueError(f"pi time for {tr.value} must be positive")

    def rabi_amplitude(self, tr: Transition) -> float:
        return 1.0 / (2.0 * self.pi_time[tr])

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolSpec":
        d = dict(d)
        if "sweep" not in d and "sweep_range" in d:
            start, stop, n = d.pop("sweep_range")
            d["sweep"] = tuple(np.linspace(start, stop, int(n)))
        if "pi_time" in d and not isinstance(d["pi_time"], dict):
            d["pi_time"] = {Transition.MINUS: d["pi_time"], Transition.PLUS: d["pi_time"]}
        for key in ("init_laser", "readout_laser"):
            if key in d:
                d[key] = Channel(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "sweep": list(self.sweep), "nu": self.nu,
            "pi_time": {k.value: v for k, v in self.pi_time.items()},
            "echo_prep": self.echo_prep.value, "resolution": self.resolution,
            "init_duration": self.init_duration, "readout_duration": self.readout_duration,
            "gate_duration": self.gate_duration, "settle": self.settle,
            "readout_delay": self.readout_delay, "readout_start": self.readout_start,
            "min_frame": self.min_frame, "init_laser": self.init_laser.value,
            "readout_laser": self.readout_laser.value,
        }


class _Builder:
    def __init__(self, spec: ProtocolSpec):
        self.spec = spec
        self.events = []
        self.cursor = spec.init_duration + spec.settle

    def clock(self, ns):
        return self.spec.resolution * round(ns / self.spec.resolution)

    def pulse(self, tr, duration_us, label, phase=0.0, advance=True):
        dur = self.clock(duration_us * 1e3)
        self.events.append(ChannelEvent(MW_CHANNEL[tr], self.cursor, dur, label, tr,
                                        self.spec.rabi_amplitude(tr), phase % (2 * math.pi)))
        if advance:
            self.cursor += dur
        return dur

    def pair(self, duration_us, label, phase=0.0):
        self.pulse(Transition.MINUS, duration_us, label + " (-)", phase, advance=False)
        self.pulse(Transition.PLUS, duration_us, label + " (+)", phase)

    def wait(self, duration_us):
        self.cursor += self.clock(duration_us * 1e3)


def _prep_durations(spec):
    t_minus = spec.pi_time[Transition.MINUS]
    t_plus = spec.pi_time[Transition.PLUS]
    return t_minus, t_plus


def build_timeline(spec: ProtocolSpec, T: float) -> PulseTimeline:
    """Compile one sweep point ``T`` (us) of ``spec`` into a timeline."""
    if T < 0:
        raise TimelineError(f"negative sweep value {T}")
    b = _Builder(spec)
    s = spec
    init = ChannelEvent(s.init_laser, 0.0, b.clock(s.init_duration), "init laser")
    phase = 2 * math.pi * s.nu * T
    t_minus, t_plus = _prep_durations(s)
    kind = s.kind

    if kind is Protocol.RABI:
        b.pulse(Transition.MINUS, T, "rabi drive")
    elif kind is Protocol.SQ_RAMSEY:
        b.pulse(Transition.MINUS, t_minus / 2, "pi/2")
        b.wait(T)
        b.pulse(Transition.MINUS, t_minus / 2, "pi/2 (ramp)", phase)
    elif kind is Protocol.DQ_RAMSEY:
        # simultaneous drive couples |0> to (|+1>+|-1>)/sqrt2 at sqrt2 times the SQ rate
        prep = t_minus / math.sqrt(2)
        b.pair(prep, "DQ prep")
        b.wait(T)
        b.pair(prep, "DQ unprep (ramp)", phase)
    elif kind is Protocol.DQ_ECHO:
        _echo_prep(b, s, 0.0, unprep=False)
        b.wait(T / 2)
        b.pulse(Transition.MINUS, t_minus, "echo pi #1")
        b.pulse(Transition.PLUS, t_plus, "echo pi #2")
        b.pulse(Transition.MINUS, t_minus, "echo pi #3")
        b.wait(T / 2)
        _echo_prep(b, s, phase, unprep=True)
    else:  # pragma: no cover
        raise TimelineError(f"unknown protocol {kind}")

    mw_end = b.cursor
    ro_start = b.clock(mw_end + s.readout_delay) if s.readout_start is None else b.clock(s.readout_start)
    readout = ChannelEvent(s.readout_laser, ro_start, b.clock(s.readout_duration), "readout laser")
    gate = ChannelEvent(Channel.CAMERA_GATE, ro_start, b.clock(s.gate_duration), "camera gate")
    events = [init] + b.events + [readout, gate]
    end = max(e.end for e in events)
    total = max(end, s.min_frame)
    total = s.resolution * math.ceil(total / s.resolution)
    tl = PulseTimeline(tuple(sorted(events, key=lambda e: (e.start, e.channel.value))),
                       float(total), float(T), kind)

    collisions = [d for d in validate_timeline(tl, s.resolution) if d.kind == "overlap"]
    collisions += _readout_collisions(tl)
    if collisions:
        raise TimelineError(f"sweep value {T} us: " + "; ".join(d.message for d in collisions))
    return tl


def _echo_prep(b: _Builder, s: ProtocolSpec, phase, unprep):
    t_minus, t_plus = _prep_durations(s)
    tag = "unprep" if unprep else "prep"
    if s.echo_prep is EchoPrep.SIMULTANEOUS:
        b.pair(t_minus / (2 * math.sqrt(2)), f"echo {tag}", phase)
        return
    rot = COMPOSITE_ANGLE / math.pi * t_plus
    if unprep:
        b.pulse(Transition.PLUS, rot, f"echo {tag} rotation", phase)
        b.pulse(Transition.MINUS, t_minus / 2, f"echo {tag} pi/2", phase)
    else:
        b.pulse(Transition.MINUS, t_minus / 2, f"echo {tag} pi/2", phase)
        b.pulse(Transition.PLUS, rot, f"echo {tag} rotation", phase)


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # "alignment" | "overlap" | "gate" | "duration"
    message: str


def _readout_collisions(tl: PulseTimeline):
    lasers = [e for e in tl.events if e.channel in LASER_CHANNELS]
    out = []
    for mw in tl.mw_events():
        for las in lasers:
            if mw.start < las.end and las.start < mw.end and mw.duration > 0:
                out.append(Diagnostic("overlap", f"{mw.label!r} collides with {las.label!r}"))
    return out


def validate_timeline(tl: PulseTimeline, resolution: float = 2.0) -> list:
    """Return every rule violation in ``tl``; an empty list means well formed."""
    diags = []
    for e in tl.events:
        for name, value in (("start", e.start), ("duration", e.duration)):
            if abs(value / resolution - round(value / resolution)) > 1e-9:
                diags.append(Diagnostic("alignment",
                                        f"{e.label or e.channel.value} {name} {value:g} ns "
                                        f"not aligned to {resolution:g} ns"))
    by_channel = {}
    for e in tl.events:
        by_channel.setdefault(e.channel, []).append(e)
    for ch, lst in by_channel.items():
        lst = sorted(lst, key=lambda e: e.start)
        for a, c in zip(lst, lst[1:]):
            if c.start < a.end and a.duration > 0 and c.duration > 0:
                diags.append(Diagnostic("overlap",
                                        f"{ch.value}: {a.label!r} overlaps {c.label!r}"))
    end = max((e.end for e in tl.events), default=0.0)
    if tl.total_duration < end:
        diags.append(Diagnostic("duration", f"total {tl.total_duration:g} ns < last event end {end:g} ns"))
    for e in tl.events:
        if e.channel in GATE_COUNTER and e.end > tl.total_duration:
            diags.append(Diagnostic("gate", f"camera gate {e.label!r} ends outside the frame"))
    return diags


@dataclass(frozen=True)
class Schedule:
    timelines: tuple
    repetitions: int

    def __len__(self):
        return len(self.timelines)


def sweep_schedule(spec: ProtocolSpec, repetitions: int = 1) -> Schedule:
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    return Schedule(tuple(build_timeline(spec, T) for T in spec.sweep), int(repetitions))


def with_sweep(spec: ProtocolSpec, sweep) -> ProtocolSpec:
    return replace(spec, sweep=tuple(sweep))
