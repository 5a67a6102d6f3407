"""Binary frame files, streaming reduction, pixel binning and map stitching.

File layout (all integers little-endian)::

    header, 128 bytes
      0  4s   magic b"WSPC"
      4  u16  version (1)
      6  u16  rows
      8  u16  cols
     10  u8   counters (1..3)
     11  u8   padding
     12  u32  integration_time_ns
     16  u64  frame_count
     24  3 x (u32 start_ns, u32 duration_ns)   gate table, unused slots zero
     48  u64  master_seed
     56  u32  sequences_per_frame
     60  u32  sequence_period_ns
     64  32s  run id (SHA-256 of the producing configuration), zero if unknown
     96  32x  reserved, zero
    frames, each counters*rows*cols u16, counter-major then row-major

See ``docs/frame_format.md`` for the full description and the conformance
fixture.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detector import COUNTER_MAX, NEAR_SATURATION, FrameRecord, GateWindow

MAGIC = b"WSPC"
VERSION = 1
HEADER_SIZE = 128
_HEADER = struct.Struct("<4sHHHBxIQ" + "II" * 3 + "QII32s32x")
assert _HEADER.size == HEADER_SIZE


class FrameFileError(ValueError):
    pass


class TruncatedFrameFile(FrameFileError):
    def __init__(self, message, last_complete_index):
        super().__init__(message)
        self.last_complete_index = last_complete_index


@dataclass(frozen=True)
class FrameFileHeader:
    rows: int = 32
    cols: int = 64
    counters: int = 1
    integration_time_ns: int = 10_000
    frame_count: int = 0
    gates: tuple = ()  # ((start_ns, duration_ns), ...) per counter
    master_seed: int = 0
    sequences_per_frame: int = 1
    sequence_period_ns: int = 0
    run_id: bytes = bytes(32)
    version: int = VERSION

    def __post_init__(self):
        if self.rows * self.cols != 2048:
            raise FrameFileError(f"rows*cols must be 2048, got {self.rows}x{self.cols}")
        if not 1 <= self.counters <= 3:
            raise FrameFileError("counters must be 1..3")
        if len(self.gates) > 3:
            raise FrameFileError("at most three gate windows")
        object.__setattr__(self, "gates", tuple((int(a), int(b)) for a, b in self.gates))
        rid = bytes.fromhex(self.run_id) if isinstance(self.run_id, str) else bytes(self.run_id)
        if len(rid) != 32:
            raise FrameFileError("run id must be 32 bytes")
        object.__setattr__(self, "run_id", rid)

    @property
    def frame_shape(self):
        return (self.counters, self.rows, self.cols)

    @property
    def frame_bytes(self) -> int:
        return 2 * self.counters * self.rows * self.cols

    def gate_windows(self):
        return [GateWindow(i, a, b) for i, (a, b) in enumerate(self.gates) if b > 0]

    def pack(self) -> bytes:
        gates = list(self.gates) + [(0, 0)] * (3 - len(self.gates))
        flat = [v for g in gates for v in g]
        return _HEADER.pack(MAGIC, self.version, self.rows, self.cols, self.counters,
                            self.integration_time_ns, self.frame_count, *flat,
                            self.master_seed, self.sequences_per_frame, self.sequence_period_ns,
                            self.run_id)

    @classmethod
    def unpack(cls, raw: bytes) -> "FrameFileHeader":
        if len(raw) < HEADER_SIZE:
            raise TruncatedFrameFile("file shorter than the header", -1)
        vals = _HEADER.unpack(raw[:HEADER_SIZE])
        magic, version, rows, cols, counters, integ, count = vals[:7]
        if magic != MAGIC:
            raise FrameFileError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FrameFileError(f"unsupported version {version}")
        g = vals[7:13]
        gates = tuple((g[2 * i], g[2 * i + 1]) for i in range(3) if g[2 * i + 1] > 0)
        seed, spf, period, run_id = vals[13:17]
        return cls(rows, cols, counters, integ, count, gates, seed, spf, period, run_id, version)


def _frame_array(frame, header: FrameFileHeader) -> np.ndarray:
    counts = frame.counts if isinstance(frame, FrameRecord) else frame
    counts = np.asarray(counts)
    if counts.ndim == 2:
        counts = counts[None]
    if counts.shape != header.frame_shape:
        raise FrameFileError(f"frame shape {counts.shape} != {header.frame_shape}")
    return counts.astype("<u2", copy=False)


def write_frames(header: FrameFileHeader, frames, destination) -> int:
    """Write ``frames`` after ``header``; the stored frame count is patched at
    the end.  Returns the number of bytes written."""
    own = isinstance(destination, (str, os.PathLike))
    fh = open(destination, "wb") if own else destination
    try:
        start = fh.tell()
        fh.write(header.pack())
        n = 0
        for frame in frames:
            fh.write(_frame_array(frame, header).tobytes())
            n += 1
        end = fh.tell()
        fh.seek(start + 16)
        fh.write(struct.pack("<Q", n))
        fh.seek(end)
        return end - start
    finally:
        if own:
            fh.close()


class FrameReader:
    """Sequential and random access over a frame file without loading it."""

    def __init__(self, source):
        self.path = source
        self._fh = open(source, "rb")
        self.header = FrameFileHeader.unpack(self._fh.read(HEADER_SIZE))
        size = os.fstat(self._fh.fileno()).st_size
        self.available = (size - HEADER_SIZE) // self.header.frame_bytes
        self.truncated = self.available < self.header.frame_count

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._fh.close()

    def __len__(self):
        return min(self.available, self.header.frame_count)

    def _truncation(self):
        return TruncatedFrameFile(
            f"{self.path}: header declares {self.header.frame_count} frames, "
            f"only {self.available} complete", self.available - 1)

    def __getitem__(self, index) -> np.ndarray:
        n = self.header.frame_count
        if index < 0:
            index += n
        if not 0 <= index < n:
            raise IndexError(index)
        if index >= self.available:
            raise self._truncation()
        self._fh.seek(HEADER_SIZE + index * self.header.frame_bytes)
        buf = self._fh.read(self.header.frame_bytes)
        return np.frombuffer(buf, "<u2").reshape(self.header.frame_shape)

    def iter_chunks(self, chunk_frames=4096):
        """Yield ``(k, counters, rows, cols)`` uint16 arrays.

        One buffer is reused for every chunk, so the working set is bounded by
        ``chunk_frames`` regardless of the file size; callers must copy any
        chunk they keep.
        """
        hdr = self.header
        buf = np.empty((chunk_frames,) + hdr.frame_shape, dtype="<u2")
        view = memoryview(buf).cast("B")
        self._fh.seek(HEADER_SIZE)
        remaining = len(self)
        while remaining:
            k = min(chunk_frames, remaining)
            got = self._fh.readinto(view[: k * hdr.frame_bytes])
            if got < k * hdr.frame_bytes:  # file shrank underneath us
                raise self._truncation()
            yield buf[:k]
            remaining -= k
        if self.truncated:
            raise self._truncation()

    def __iter__(self):
        for chunk in self.iter_chunks(256):
            for frame in chunk:
                yield frame.copy()

    def records(self):
        hdr = self.header
        gates = hdr.gate_windows()
        for i, counts in enumerate(self):
            yield FrameRecord(counts, hdr.integration_time_ns * 1e-3, gates, i,
                              counts >= NEAR_SATURATION)


def read_frames(source):
    """Return ``(header, iterator over frames)``; the iterator owns the file."""
    reader = FrameReader(source)

    def _gen():
        with reader:
            yield from reader

    return reader.header, _gen()


def bin_pixels(frame, factor: int):
    """Sum ``factor x factor`` pixel blocks of the last two axes.

    Accepts a bare array or a :class:`FrameRecord`; for records the saturation
    flags are OR-combined over each block.
    """
    if factor not in (1, 2, 4):
        raise ValueError("bin factor must be 1, 2 or 4")
    if isinstance(frame, FrameRecord):
        counts = bin_pixels(frame.counts, factor)
        return _BinnedFrame(counts, _block_any(frame.saturation, factor), frame)
    a = np.asarray(frame)
    rows, cols = a.shape[-2:]
    if rows % factor or cols % factor:
        raise ValueError(f"bin factor {factor} does not divide {rows}x{cols}")
    if factor == 1:
        return a
    acc = np.uint32 if a.dtype.kind in "ui" and a.dtype.itemsize < 4 else a.dtype
    while factor > 1:
        a = _halve(a, acc)
        factor //= 2
    return a


def _halve(a, acc):
    # 2x2 sums by adding strided slices; much faster than a reshaped sum
    s = a[..., 0::2, :].astype(acc)
    s += a[..., 1::2, :]
    return s[..., 0::2] + s[..., 1::2]


def _block_any(flags, factor):
    rows, cols = flags.shape[-2:]
    shaped = flags.reshape(flags.shape[:-2] + (rows // factor, factor, cols // factor, factor))
    return shaped.any(axis=(-3, -1))


@dataclass
class _BinnedFrame:
    """Binned frame: block sums can exceed the single-counter range."""

    counts: np.ndarray
    saturation: np.ndarray
    source: FrameRecord

    @property
    def frame_index(self):
        return self.source.frame_index

    @property
    def integration_time(self):
        return self.source.integration_time


class SumFrames:
    """Exact integer sum (and count) of transformed frames."""

    commutative = True

    def __init__(self):
        self.total = None
        self.count = 0

    def update(self, batch):
        s = batch.sum(axis=0, dtype=np.int64)
        self.total = s if self.total is None else self.total + s
        self.count += batch.shape[0]

    def merge(self, other):
        if other.total is not None:
            self.update_partial(other.total, other.count)

    def update_partial(self, total, count):
        self.total = total if self.total is None else self.total + total
        self.count += count

    def result(self):
        return self.total


class MeanFrame(SumFrames):
    def result(self):
        if not self.count:
            return None
        return self.total / self.count


def stream_reduce(source, transform=None, accumulator=None, chunk_frames=4096, workers=1):
    """Fold every frame of ``source`` through ``transform`` into ``accumulator``.

    ``transform`` maps a batch ``(k, counters, rows, cols)`` to a batch with
    one leading entry per frame; ``accumulator`` needs ``update(batch)`` and
    ``result()``.  With ``workers > 1`` chunks are reduced into separate
    accumulators and merged, which requires ``accumulator.commutative`` and a
    ``merge`` method.
    """
    accumulator = SumFrames() if accumulator is None else accumulator
    transform = (lambda b: b) if transform is None else transform
    with FrameReader(source) as reader:
        if workers <= 1:
            for chunk in reader.iter_chunks(chunk_frames):
                accumulator.update(transform(chunk))
            return accumulator.result()
        if not getattr(accumulator, "commutative", False):
            raise ValueError("parallel reduction needs a commutative accumulator")
        cls = type(accumulator)

        def work(chunk):
            part = cls()
            part.update(transform(chunk))
            return part

        # at most 2*workers chunks in flight keeps the working set bounded
        with ThreadPoolExecutor(workers) as pool:
            pending = deque()
            for chunk in reader.iter_chunks(chunk_frames):
                pending.append(pool.submit(work, chunk.copy()))
                if len(pending) >= 2 * workers:
                    accumulator.merge(pending.popleft().result())
            while pending:
                accumulator.merge(pending.popleft().result())
        return accumulator.result()


def accumulate_blocks(source, block_frames, counter=0, chunk_frames=4096):
    """Sum consecutive runs of ``block_frames`` frames of one counter.

    Returns an int64 array ``(n_blocks, rows, cols)``; a trailing partial
    block is an error.  Used to turn a frame file back into per-sweep-point
    accumulated images.
    """
    with FrameReader(source) as reader:
        n = len(reader)
        if n % block_frames:
            raise FrameFileError(f"{n} frames is not a whole number of {block_frames}-frame blocks")
        hdr = reader.header
        out = np.zeros((n // block_frames, hdr.rows, hdr.cols), np.int64)
        start = 0
        for chunk in reader.iter_chunks(chunk_frames):
            block = (start + np.arange(len(chunk))) // block_frames
            edges = np.flatnonzero(np.r_[True, np.diff(block) > 0])
            out[block[edges]] += np.add.reduceat(chunk[:, counter], edges, axis=0, dtype=np.int64)
            start += len(chunk)
    return out


# ---------------------------------------------------------------------------
# parameter maps
# ---------------------------------------------------------------------------

PARAM_NAMES = ("c0", "c", "omega", "phi", "tau")

FLAG_NOT_CONVERGED = 1
FLAG_TAU_CLAMPED = 2
FLAG_ALIASED = 4
FLAG_NO_SIGNAL = 8
FLAG_SINGULAR = 16
FLAG_INVALID = 32  # non-physical after correction (eff. Rabi below |detuning|)
FLAG_GAP = 64


@dataclass(frozen=True)
class StagePose:
    x: float = 0.0  # um
    y: float = 0.0
    set_id: int = 0
    detuning: float = 0.0  # MW carrier detuning for this frame set, MHz

    def __post_init__(self):
        if not all(np.isfinite([self.x, self.y, self.detuning])):
            raise ValueError("stage pose must be finite")


@dataclass
class ParameterMap:
    """Per-pixel fit results; ``values``/``sigma`` have shape ``(rows, cols, 5)``.

    ``meta`` carries the geometry: ``pixel_spacing`` (um), ``origin`` (object
    plane centre of pixel (0, 0) relative to the stage position, um),
    ``magnification``, ``bin`` and the pose.
    """

    values: np.ndarray
    sigma: np.ndarray
    converged: np.ndarray
    residual: np.ndarray
    flags: np.ndarray
    iterations: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    source: np.ndarray | None = None  # stitched maps: set id per pixel, -1 for gaps

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        self.sigma = np.asarray(self.sigma, float)
        self.converged = np.asarray(self.converged, bool)
        self.values[~self.converged] = np.nan
        self.sigma[~self.converged] = np.nan
        if np.any(self.sigma[self.converged] < 0):
            raise ValueError("sigma must be >= 0")
        if self.iterations is None:
            self.iterations = np.zeros(self.converged.shape, int)

    @property
    def shape(self):
        return self.converged.shape

    def __getitem__(self, name) -> np.ndarray:
        return self.values[..., PARAM_NAMES.index(name)]

    def error(self, name) -> np.ndarray:
        return self.sigma[..., PARAM_NAMES.index(name)]

    def summary(self) -> dict:
        conv = self.converged
        out = {"pixels": int(conv.size), "converged": int(conv.sum()),
               "converged_fraction": float(conv.mean()) if conv.size else 0.0}
        for i, name in enumerate(PARAM_NAMES):
            out[f"mean_{name}"] = float(np.nanmean(self.values[conv, i])) if conv.any() else float("nan")
            out[f"mean_sigma_{name}"] = float(np.nanmean(self.sigma[conv, i])) if conv.any() else float("nan")
        return out

    # -- persistence -------------------------------------------------------
    def save(self, path):
        meta = {k: v for k, v in self.meta.items()}
        extra = {} if self.source is None else {"source": self.source}
        np.savez_compressed(path, values=self.values, sigma=self.sigma, converged=self.converged,
                            residual=self.residual, flags=self.flags, iterations=self.iterations,
                            meta=np.array(repr(meta)), **extra)

    @classmethod
    def load(cls, path) -> "ParameterMap":
        import ast
        with np.load(path, allow_pickle=False) as z:
            meta = ast.literal_eval(str(z["meta"]))
            source = z["source"] if "source" in z.files else None
            return cls(z["values"], z["sigma"], z["converged"], z["residual"], z["flags"],
                       z["iterations"], meta, source)

    def to_csv(self, path_or_buf=None, comment=None):
        """Write one line per pixel: row, col, parameters, sigmas, flags.

        ``comment`` is written first as a ``#`` line (provenance).
        """
        buf = io.StringIO() if path_or_buf is None else None
        own = isinstance(path_or_buf, (str, os.PathLike))
        fh = buf if buf is not None else (open(path_or_buf, "w", newline="") if own else path_or_buf)
        try:
            w = csv.writer(fh)
            if comment:
                fh.write(f"# {comment}\n")
            w.writerow(["row", "col", *PARAM_NAMES, *(f"sigma_{p}" for p in PARAM_NAMES),
                        "converged", "residual", "flags"])
            rows, cols = self.shape
            for r in range(rows):
                for c in range(cols):
                    vals = ["" if not np.isfinite(v) else repr(float(v)) for v in self.values[r, c]]
                    sig = ["" if not np.isfinite(v) else repr(float(v)) for v in self.sigma[r, c]]
                    w.writerow([r, c, *vals, *sig, int(self.converged[r, c]),
                                repr(float(self.residual[r, c])), int(self.flags[r, c])])
        finally:
            if own:
                fh.close()
        return buf.getvalue() if buf is not None else None


def write_pgm(path, image, vmin=None, vmax=None, comment=None):
    """Save ``image`` as a 16-bit binary PGM; NaNs map to 0, the range to 1..65535.

    ``comment`` goes into the header as a ``#`` line, together with the range.
    """
    img = np.asarray(image, float)
    finite = np.isfinite(img)
    if vmin is None:
        vmin = float(img[finite].min()) if finite.any() else 0.0
    if vmax is None:
        vmax = float(img[finite].max()) if finite.any() else 1.0
    span = vmax - vmin if vmax > vmin else 1.0
    scaled = np.zeros(img.shape, dtype=">u2")
    scaled[finite] = 1 + np.round((np.clip(img[finite], vmin, vmax) - vmin) / span * 65534).astype(int)
    with open(path, "wb") as fh:
        notes = f"# range {vmin!r} {vmax!r}\n" + (f"# {comment}\n" if comment else "")
        fh.write(f"P5\n{notes}{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(scaled.tobytes())
    return vmin, vmax


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if not line.startswith(b"#"):
            fields.extend(line.split())
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos:], dtype=">u2").reshape(h, w)


def export_map_images(pmap: ParameterMap, directory, prefix="map", comment=None):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in PARAM_NAMES:
        p = os.path.join(directory, f"{prefix}_{name}.pgm")
        write_pgm(p, pmap[name], comment=comment)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# stitching
# ---------------------------------------------------------------------------

def correct_rabi(omega, sigma, detuning):
    """Drive amplitude from a fitted effective Rabi frequency, with its 1-sigma.

    Returns ``(omega_s, sigma_s, valid)``; pixels with ``omega < |detuning|``
    are invalid.
    """
    omega = np.asarray(omega, float)
    d2 = np.asarray(detuning, float) ** 2
    valid = np.isfinite(omega) & (omega ** 2 >= d2)
    with np.errstate(invalid="ignore", divide="ignore"):
        omega_s = np.where(valid, np.sqrt(np.where(valid, omega ** 2 - d2, 0.0)), np.nan)
        sigma_s = np.where(valid & (omega_s > 0), omega * sigma / omega_s, np.nan)
    return omega_s, sigma_s, valid


def _lattice_offset(origin, ref, spacing):
    idx = (np.asarray(origin) - np.asarray(ref)) / spacing
    if np.any(np.abs(idx - np.round(idx)) > 1e-6):
        raise ValueError("map origins are not on a common pixel lattice")
    return np.round(idx).astype(int)


def stitch(items, correct=True, detuning_map=None) -> ParameterMap:
    """Combine stage-offset maps onto one pixel lattice.

    ``items`` is a sequence of ``(ParameterMap, StagePose)``.  Each map's
    ``meta['origin']`` is taken relative to its pose.  Rabi maps are corrected
    per pixel for the set's carrier detuning (or ``detuning_map``, a callable
    of object-plane ``(x, y)``) before placement; overlaps are combined by
    inverse-variance weighting.  Gaps keep NaN values and :data:`FLAG_GAP`.
    """
    items = list(items)
    if not items:
        raise ValueError("nothing to stitch")
    spacings = {round(m.meta.get("pixel_spacing", 1.0), 12) for m, _ in items}
    mags = {m.meta.get("magnification") for m, _ in items}
    if len(spacings) != 1 or len(mags) != 1:
        raise ValueError("maps have mismatched magnification or pixel spacing")
    spacing = spacings.pop()
    # deterministic order so the result does not depend on input order
    items.sort(key=lambda it: (it[1].set_id, it[1].x, it[1].y))
    origins = [np.add(m.meta.get("origin", (0.0, 0.0)), (p.x, p.y)) for m, p in items]
    ref = np.min(origins, axis=0)
    offsets = [_lattice_offset(o, ref, spacing) for o in origins]
    ncols = max(off[0] + m.shape[1] for off, (m, _) in zip(offsets, items))
    nrows = max(off[1] + m.shape[0] for off, (m, _) in zip(offsets, items))

    wsum = np.zeros((nrows, ncols, 5))
    vsum = np.zeros((nrows, ncols, 5))
    source = np.full((nrows, ncols), -1, int)
    best_w = np.zeros((nrows, ncols))
    invalid = np.zeros((nrows, ncols), bool)
    covered = np.zeros((nrows, ncols), bool)
    omega_i = PARAM_NAMES.index("omega")

    for (m, pose), (ox, oy), origin in zip(items, offsets, origins):
        vals = m.values.copy()
        sig = m.sigma.copy()
        ok = m.converged.copy()
        if correct:
            if detuning_map is not None:
                r, c = np.indices(m.shape)
                det = detuning_map(origin[0] + spacing * c, origin[1] + spacing * r)
            else:
                det = pose.detuning
            om, so, valid = correct_rabi(vals[..., omega_i], sig[..., omega_i], det)
            bad = ok & ~valid
            vals[..., omega_i], sig[..., omega_i] = om, so
            sl = (slice(oy, oy + m.shape[0]), slice(ox, ox + m.shape[1]))
            invalid[sl] |= bad
            ok &= valid
        sl = (slice(oy, oy + m.shape[0]), slice(ox, ox + m.shape[1]))
        covered[sl] = True
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(ok[..., None] & (sig > 0), 1.0 / sig ** 2, 0.0)
            w = np.where(ok[..., None] & (sig == 0), 1e300, w)
        w = np.where(np.isfinite(vals), w, 0.0)
        wsum[sl] += w
        vsum[sl] += w * np.nan_to_num(vals)
        pix_w = w[..., omega_i]
        better = pix_w > best_w[sl]
        source[sl] = np.where(better, pose.set_id, source[sl])
        best_w[sl] = np.maximum(best_w[sl], pix_w)

    has = wsum[..., omega_i] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(wsum > 0, vsum / wsum, np.nan)
        sigma = np.where(wsum > 0, 1.0 / np.sqrt(wsum), np.nan)
    flags = np.zeros((nrows, ncols), np.int32)
    flags[~covered] |= FLAG_GAP
    flags[invalid & ~has] |= FLAG_INVALID
    flags[~has] |= FLAG_NOT_CONVERGED
    meta = dict(items[0][0].meta)
    meta.update(origin=tuple(float(v) for v in ref), stitched_sets=[p.set_id for _, p in items],
                rabi_corrected=bool(correct))
    meta.pop("pose", None)
    return ParameterMap(values, sigma, has, np.zeros((nrows, ncols)), flags, None, meta, source)
