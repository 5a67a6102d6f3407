"""Regenerate conformance.wspc; see docs/frame_format.md."""

import os

import numpy as np

from spadtwin.framestore import FrameFileHeader, write_frames

HERE = os.path.dirname(os.path.abspath(__file__))


def fixture_frames():
    idx = np.arange(3 * 2 * 2048).reshape(3, 2, 32, 64)
    frame = idx // (2 * 2048)
    pixel = idx % 2048
    return ((frame * 2048 + pixel) % 512).astype(np.uint16)


def header():
    return FrameFileHeader(rows=32, cols=64, counters=2, integration_time_ns=10_000,
                           gates=((100, 1000), (2000, 500)), master_seed=42,
                           sequences_per_frame=1, sequence_period_ns=10_000, run_id=bytes(range(32)))


if __name__ == "__main__":
    write_frames(header(), fixture_frames(), os.path.join(HERE, "conformance.wspc"))
