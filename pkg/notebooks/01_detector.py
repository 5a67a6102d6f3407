"""
The SPAD array: dead time, LFSR counters and one frame
======================================================

Each pixel counts photons with a 9-bit LFSR and goes blind for 50 ns after
every detection.  This script walks through the count-rate law, the counter
code and a single simulated frame.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from spadtwin import detector as det
from spadtwin import lfsr
from spadtwin.sequencer import ProtocolSpec, build_timeline

# an ideal pixel (every photon detected) shows the dead-time ceiling of 1/50 ns
ideal = det.SpadConfig(dark_rate=0.0, pdp=1.0, fill_factor=1.0)
flux = np.logspace(4, 11, 200)
rate = det.detected_rate(flux, ideal)
print(f"detected rate at 1e11 cps: {rate[-1] / 1e6:.3f} Mcps")

plt.loglog(flux, rate, label="non-paralyzable")
plt.loglog(flux, flux, "--", label="linear")
plt.ylim(1e4, 1e8)
plt.xlabel("incident rate (cps)")
plt.ylabel("detected rate (cps)")
plt.legend()
plt.savefig("01_dead_time.png")
plt.close()

# the counter: encode a count into a register state and back
for n in (0, 1, 2, 510):
    state = lfsr.encode(n)
    print(f"count {n:3d} -> state {state:09b} -> {lfsr.decode(state)}")

# one frame of a Rabi sequence, uniform 20 Mcps per pixel
tl = build_timeline(ProtocolSpec("RABI", (0.1,)), 0.1)
cfg = det.SpadConfig()
flux = np.full(cfg.shape, 20e6 / (cfg.pdp * cfg.fill_factor))
frame = det.acquire_frame(flux, tl, cfg, seed=1, sequences=20)
print(f"frame mean {frame.counts.mean():.1f} counts, integration {frame.integration_time:.1f} us, "
      f"readout {det.frame_readout_time(cfg):.2f} us")
