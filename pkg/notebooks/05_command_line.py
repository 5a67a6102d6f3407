"""
The command-line pipeline
=========================

``spadtwin simulate`` writes a frame file with its manifest, ``analyze`` fits
maps from it and ``report`` summarizes the result.  Every output carries the
run id, a hash of the resolved configuration, so a map can always be traced
back to the exact scene and seed that produced it.
"""

import json
import os
import tempfile

from spadtwin.cli import main

work = tempfile.mkdtemp(prefix="spadtwin-")
run, ana = os.path.join(work, "run"), os.path.join(work, "map")

main(["presets"])
main(["simulate", "--config", "rabi-50x", "--out", run])
main(["analyze", "--in", run, "--mode", "rabi", "--bin", "2", "--out", ana,
      "--region", "pixel", "8", "16", "--region", "full", "--region", "object"])
code = main(["report", "--run", ana])
print("report exit code", code)

manifest = json.load(open(os.path.join(run, "manifest.json")))
print("run id", manifest["run_id"])
print("outputs:", sorted(os.listdir(ana)))
