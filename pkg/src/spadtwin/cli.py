"""``spadtwin`` command line: simulate, analyze, stitch, report.

Exit codes are meant for scripts:

    0  success
    1  ran, but convergence is below the requested threshold
    2  invalid input (config, files, flags, provenance)
    3  analysis produced no converged pixels
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, runconfig
from .fitting import (SweepStack, area_signal, density_map, derive_dD_map, derive_field_map,
                      fit_map, fitted_gradient)
from .framestore import (FLAG_GAP, FLAG_INVALID, FrameFileHeader, FrameReader, ParameterMap, StagePose,
                         accumulate_blocks, correct_rabi, export_map_images, stitch, write_frames, write_pgm)
from .sequencer import sweep_schedule
from .simulate import PixelModel, photodiode_series, simulate_frames

log = logging.getLogger("spadtwin")

EXIT_OK, EXIT_UNHEALTHY, EXIT_INVALID, EXIT_NO_CONVERGED = 0, 1, 2, 3
MODES = {"rabi": "RABI", "sq-ramsey": "SQ_RAMSEY", "dq-ramsey": "DQ_RAMSEY", "dq-echo": "DQ_ECHO"}
FRAMES = "frames.wspc"
MANIFEST = "manifest.json"
SUMMARY = "summary.json"


class CliError(Exception):
    def __init__(self, message, code=EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return str(v)


def _read_json(path, what):
    if not os.path.exists(path):
        raise CliError(f"missing {what}: {path}")
    with open(path) as fh:
        return json.load(fh)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        cfg = runconfig.load(args.config, seed=args.seed)
    except runconfig.ConfigError as exc:
        raise CliError(f"invalid config: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    spec = cfg.protocol
    try:
        pm = PixelModel(cfg.scene, cfg.optics, cfg.spad, cfg.pose)
    except ValueError as exc:
        raise CliError(f"invalid config: {cfg.path}: {exc}") from None
    timelines = sweep_schedule(spec).timelines
    # the header records the longest sequence; shorter ones are padded to it
    period = max(t.frame_integration() for t in timelines)
    spf = cfg.sequences_per_frame
    gates = tuple((int(g.start), int(g.duration)) for g in timelines[0].camera_gates())
    header = FrameFileHeader(rows=cfg.spad.rows, cols=cfg.spad.cols, counters=cfg.spad.counters_per_pixel,
                             integration_time_ns=int(round(spf * period)), gates=gates,
                             master_seed=cfg.seed, sequences_per_frame=spf,
                             sequence_period_ns=int(round(period)), run_id=cfg.run_id)
    path = os.path.join(args.out, FRAMES)
    frames = simulate_frames(cfg.scene, cfg.optics, spec, cfg.spad, cfg.repetitions, cfg.seed, cfg.pose,
                             sequences_per_frame=spf, model=pm)
    nbytes = write_frames(header, frames, path)
    pd = photodiode_series(cfg.scene, spec, carrier_detuning=cfg.pose.detuning)
    _write_json(os.path.join(args.out, "photodiode.json"),
                {"run_id": cfg.run_id, "sweep": list(spec.sweep),
                 "signal": pd.tolist() if np.all(np.isfinite(pd)) else None})
    geometry = pm.geometry()
    man = runconfig.manifest(cfg, kind="simulate", frames=FRAMES, frame_bytes=nbytes,
                             frames_sha256=_sha256(path),
                             layout={"reference_blocks": 1, "sweep_points": len(spec.sweep),
                                     "frames_per_block": cfg.repetitions},
                             protocol=spec.kind.value, nu=spec.nu, sweep=list(spec.sweep),
                             geometry=geometry, spin=vars(cfg.scene.spin))
    _write_json(os.path.join(args.out, MANIFEST), man)
    print(f"wrote {len(spec.sweep) + 1} x {cfg.repetitions} frames to {path} (run {cfg.run_id[:12]})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def load_run(directory) -> tuple[dict, SweepStack]:
    """Rebuild the accumulated sweep stack of a simulate output directory."""
    man = _read_json(os.path.join(directory, MANIFEST), "manifest")
    path = os.path.join(directory, man.get("frames", FRAMES))
    if not os.path.exists(path):
        raise CliError(f"missing frame file: {path}")
    with FrameReader(path) as reader:
        if reader.header.run_id.hex() != man["run_id"]:
            raise CliError(f"{path}: frame file run id does not match its manifest")
    lay = man["layout"]
    blocks = accumulate_blocks(path, lay["frames_per_block"])
    if len(blocks) != lay["reference_blocks"] + lay["sweep_points"]:
        raise CliError(f"{path}: expected {lay['sweep_points'] + 1} blocks, found {len(blocks)}")
    pd_path = os.path.join(directory, "photodiode.json")
    pd = None
    if os.path.exists(pd_path):
        signal = _read_json(pd_path, "photodiode channel")["signal"]
        pd = None if signal is None else np.asarray(signal, float)
    meta = dict(man["geometry"], protocol=man["protocol"], nu=man["nu"], seed=man["seed"],
                run_id=man["run_id"], repetitions=lay["frames_per_block"])
    meta["origin"] = tuple(meta["origin"])
    return man, SweepStack(np.asarray(man["sweep"]), blocks[1:], blocks[0], lay["frames_per_block"], pd, meta)


def parse_region(tokens):
    """``full``/``frame``, ``object``, ``pixel R C`` or ``group R0 R1 C0 C1``."""
    kind, rest = tokens[0], tokens[1:]
    try:
        nums = [int(t) for t in rest]
    except ValueError:
        raise CliError(f"bad region {' '.join(tokens)!r}") from None
    if kind in ("full", "frame") and not nums:
        return ("frame",)
    if kind == "object" and not nums:
        return ("object",)
    if kind == "pixel" and len(nums) == 2:
        return ("pixel", *nums)
    if kind == "group" and len(nums) == 4:
        return ("group", *nums)
    raise CliError(f"bad region {' '.join(tokens)!r}; use full, object, pixel R C or group R0 R1 C0 C1")


def _stats(a):
    a = np.asarray(a, float)
    ok = np.isfinite(a)
    if not ok.any():
        return {"mean": None, "min": None, "max": None}
    return {"mean": float(a[ok].mean()), "min": float(a[ok].min()), "max": float(a[ok].max())}


def _derived(pmap, mode, man, comment, out):
    nu = man["nu"]
    spin = man.get("spin", {})
    omega, sig = pmap["omega"], pmap.error("omega")
    maps = {}
    if mode == "rabi":
        det = man["geometry"]["pose"]["detuning"]
        if det:
            maps["drive"], _, _ = correct_rabi(omega, sig, det)
    elif mode in ("sq-ramsey", "dq-ramsey"):
        maps["dBz"], maps["sigma_dBz"] = derive_field_map(omega, nu, "SQ" if mode == "sq-ramsey" else "DQ", sig)
        if mode == "sq-ramsey":
            maps["density"], _ = density_map(pmap["tau"], spin.get("sq_base_rate", 1 / 0.35),
                                             spin.get("sq_coupling", 1.0))
    else:
        shifts = derive_dD_map(omega, nu, sigma=sig)
        maps.update(dD=shifts.dD, temperature=shifts.temperature, sigma_dD=shifts.sigma_dD)
    stats = {}
    for name, arr in maps.items():
        np.save(os.path.join(out, f"derived_{name}.npy"), arr)
        write_pgm(os.path.join(out, f"derived_{name}.pgm"), arr, comment=comment)
        stats[name] = _stats(arr)
    if "dBz" in maps:
        slope, slope_sigma = fitted_gradient(maps["dBz"], maps["sigma_dBz"], axis=1,
                                             spacing=pmap.meta["pixel_spacing"])
        stats["dBz_gradient_x"] = {"value": slope, "sigma": slope_sigma, "unit": "G/um"}
    if "dD" in maps:
        a = np.abs(maps["dD"][np.isfinite(maps["dD"])])
        stats["dD_abs_p95"] = float(np.percentile(a, 95)) if a.size else None
    return stats


def cmd_analyze(args) -> int:
    runs = [load_run(d) for d in args.inputs]
    ids = {m["run_id"] for m, _ in runs}
    if len(ids) > 1 and not args.force:
        raise CliError(f"inputs come from {len(ids)} different runs; pass --force to combine them")
    man, stack = runs[0]
    for m, s in runs[1:]:
        if m["sweep"] != man["sweep"] or s.shape != stack.shape:
            raise CliError("inputs have different sweeps or frame shapes")
        stack = SweepStack(stack.T, stack.counts + s.counts, stack.reference + s.reference,
                           stack.repetitions + s.repetitions, stack.photodiode, stack.meta)
    if MODES[args.mode] != man["protocol"]:
        raise CliError(f"--mode {args.mode} does not match the recorded protocol {man['protocol']}")
    os.makedirs(args.out, exist_ok=True)
    run_id = hashlib.sha256("|".join(sorted(ids)).encode()).hexdigest() if len(ids) > 1 else man["run_id"]
    comment = f"run_id={run_id}"

    pmap = fit_map(stack, args.mode, args.bin)
    pmap.meta["run_id"] = run_id
    pmap.save(os.path.join(args.out, "map.npz"))
    pmap.to_csv(os.path.join(args.out, "map.csv"), comment=comment)
    export_map_images(pmap, args.out, "map", comment=comment)

    summary = {"run_id": run_id, "mode": args.mode, "bin": args.bin, "shape": list(pmap.shape),
               "map": pmap.summary()}
    regions = []
    for tokens in args.region or []:
        region = parse_region(tokens)
        try:
            _, fit = area_signal(stack, region)
        except ValueError as exc:
            raise CliError(f"region {' '.join(tokens)}: {exc}") from None
        regions.append({
            "region": " ".join(tokens), "converged": bool(fit.converged),
            **{n: float(v) for n, v in zip(("c0", "c", "omega", "phi", "tau"), fit.params)},
            **{f"sigma_{n}": float(v) for n, v in zip(("c0", "c", "omega", "phi", "tau"), fit.sigma)}})
    summary["regions"] = regions
    if pmap.converged.any():
        summary["derived"] = _derived(pmap, args.mode, man, comment, args.out)
    _write_json(os.path.join(args.out, SUMMARY), summary)
    _write_json(os.path.join(args.out, MANIFEST),
                {"run_id": run_id, "kind": "analyze", "inputs": [m["run_id"] for m, _ in runs],
                 "mode": args.mode, "bin": args.bin, "version": __version__})
    s = summary["map"]
    if not pmap.converged.any():
        print(f"analysis failed: 0 of {s['pixels']} pixels converged", file=sys.stderr)
        return EXIT_NO_CONVERGED
    print(f"{s['converged']}/{s['pixels']} pixels converged; mean omega {s['mean_omega']:.4f} MHz "
          f"+- {s['mean_sigma_omega']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stitch
# ---------------------------------------------------------------------------

def load_poses(path, n):
    d = _read_json(path, "pose file")
    tiles = d.get("tiles") if isinstance(d, dict) else d
    if not isinstance(tiles, list) or len(tiles) != n:
        raise CliError(f"{path}: expected a list of {n} tile poses")
    poses = []
    for i, t in enumerate(tiles):
        try:
            poses.append(StagePose(float(t.get("x", 0)), float(t.get("y", 0)), int(t.get("set_id", i)),
                                   float(t.get("detuning", 0))))
        except (TypeError, ValueError, AttributeError) as exc:
            raise CliError(f"{path}: tiles[{i}]: {exc}") from None
    correct = d.get("correct", True) if isinstance(d, dict) else True
    return poses, bool(correct)


def cmd_stitch(args) -> int:
    maps = []
    for p in args.maps:
        if not os.path.exists(p):
            raise CliError(f"missing map file: {p}")
        maps.append(ParameterMap.load(p))
    poses, correct = load_poses(args.poses, len(maps))
    try:
        comp = stitch(list(zip(maps, poses)), correct=correct)
    except ValueError as exc:
        raise CliError(f"stitch rejected: {exc}") from None
    run_id = hashlib.sha256("|".join(str(m.meta.get("run_id", "")) for m in maps).encode()
                            + json.dumps([vars(p) for p in poses], sort_keys=True).encode()).hexdigest()
    comp.meta["run_id"] = run_id
    os.makedirs(args.out, exist_ok=True)
    comment = f"run_id={run_id}"
    comp.save(os.path.join(args.out, "composite.npz"))
    comp.to_csv(os.path.join(args.out, "composite.csv"), comment=comment)
    export_map_images(comp, args.out, "composite", comment=comment)
    summary = {"run_id": run_id, "shape": list(comp.shape), "map": comp.summary(),
               "gap_pixels": int(np.count_nonzero(comp.flags & FLAG_GAP)),
               "invalid_pixels": int(np.count_nonzero(comp.flags & FLAG_INVALID)),
               "tiles": len(maps), "rabi_corrected": correct}
    _write_json(os.path.join(args.out, SUMMARY), summary)
    _write_json(os.path.join(args.out, MANIFEST),
                {"run_id": run_id, "kind": "stitch", "inputs": [m.meta.get("run_id") for m in maps],
                 "poses": [vars(p) for p in poses], "version": __version__})
    print(f"composite {comp.shape[0]}x{comp.shape[1]}: {summary['gap_pixels']} gap, "
          f"{summary['invalid_pixels']} invalid pixels")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    man = _read_json(os.path.join(args.run, MANIFEST), "manifest")
    summary = _read_json(os.path.join(args.run, SUMMARY), "summary (run analyze first)")
    s = summary["map"]
    lines = [f"run {man['run_id']}", f"kind {man.get('kind', '?')}",
             f"pixels {s['pixels']}, converged {s['converged']} ({100 * s['converged_fraction']:.1f}%)",
             "", f"{'parameter':<10}{'mean':>14}{'mean sigma':>14}"]
    for name in ("c0", "c", "omega", "phi", "tau"):
        mean, sig = s[f"mean_{name}"], s[f"mean_sigma_{name}"]
        lines.append(f"{name:<10}{mean:>14.6g}{sig:>14.6g}")
    for name, st in summary.get("derived", {}).items():
        lines.append(f"derived {name}: {json.dumps(st, sort_keys=True)}")
    for fit in summary.get("regions", []):
        lines.append(f"region {fit['region']}: omega {fit['omega']:.4f} +- {fit['sigma_omega']:.4f} MHz, "
                     f"tau {fit['tau']:.4f} +- {fit['sigma_tau']:.4f} us")
    img_dir = os.path.join(args.run, "report")
    for fname in sorted(os.listdir(args.run)):
        if fname.endswith(".npz"):
            export_map_images(ParameterMap.load(os.path.join(args.run, fname)), img_dir,
                              fname[:-4], comment=f"run_id={man['run_id']}")
    healthy = s["converged_fraction"] >= args.threshold
    lines.append("")
    lines.append(f"convergence {'OK' if healthy else 'BELOW'} threshold {100 * args.threshold:.0f}%")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(args.run, "report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK if healthy else EXIT_UNHEALTHY


def cmd_presets(args) -> int:
    if args.name:
        try:
            print(json.dumps(runconfig.preset(args.name), indent=2))
        except KeyError as exc:
            raise CliError(str(exc)) from None
    else:
        print("\n".join(sorted(runconfig.PRESETS)))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spadtwin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"spadtwin {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="forward-simulate a run into a frame file")
    s.add_argument("--config", required=True, help="JSON config file or preset name")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="fit per-pixel maps from simulate output")
    a.add_argument("--in", dest="inputs", action="append", required=True, help="run directory (repeatable)")
    a.add_argument("--mode", choices=sorted(MODES), required=True)
    a.add_argument("--bin", type=int, choices=(1, 2, 4), default=1)
    a.add_argument("--region", nargs="+", action="append", metavar="SPEC",
                   help="full | object | pixel R C | group R0 R1 C0 C1 (repeatable)")
    a.add_argument("--out", required=True)
    a.add_argument("--force", action="store_true", help="combine inputs from different runs")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("stitch", help="combine maps taken at several stage positions")
    t.add_argument("--maps", nargs="+", required=True)
    t.add_argument("--poses", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_stitch)

    r = sub.add_parser("report", help="summarize an analyze or stitch directory")
    r.add_argument("--run", required=True)
    r.add_argument("--threshold", type=float, default=0.9, help="required converged fraction")
    r.set_defaults(func=cmd_report)

    pr = sub.add_parser("presets", help="list presets or print one as JSON")
    pr.add_argument("name", nargs="?")
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"spadtwin {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
