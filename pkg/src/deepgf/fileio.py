"""Image file formats.

DGF1 (bit-exact raw float32)::

    offset 0   b"DGF1"
    offset 4   width   u32 LE
    offset 8   height  u32 LE
    offset 12  dtype   u32 LE (1 = IEEE float32)
    offset 16  width * height float32 LE, row-major

PGM: binary ``P5`` with maxval 65535 (big-endian 16-bit samples), values
clamped to [0, 1] and rounded half-up.
"""

import os
import re
import struct

import numpy as np

from .errors import DGFIOError
from .imaging import check_image

DGF_MAGIC = b"DGF1"
DTYPE_FLOAT32 = 1
MAX_PIXELS = 1 << 28


def _write_atomic(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise DGFIOError(f"cannot write {path}: {exc}") from exc


def encode_dgf(image):
    a = check_image(image)
    h, w = a.shape
    return DGF_MAGIC + struct.pack("<III", w, h, DTYPE_FLOAT32) + a.astype("<f4").tobytes()


def decode_dgf(data, source="<bytes>"):
    if len(data) < 16:
        raise DGFIOError(f"{source}: truncated header ({len(data)} bytes)", offset=len(data))
    if data[:4] != DGF_MAGIC:
        raise DGFIOError(f"{source}: bad magic {data[:4]!r}", offset=0)
    w, h, dtype = struct.unpack_from("<III", data, 4)
    if dtype != DTYPE_FLOAT32:
        raise DGFIOError(f"{source}: unsupported dtype code {dtype}", offset=12)
    if w == 0 or h == 0 or w * h > MAX_PIXELS:
        raise DGFIOError(f"{source}: invalid dimensions {w}x{h}", offset=4)
    need = 16 + 4 * w * h
    if len(data) != need:
        raise DGFIOError(f"{source}: payload has {len(data) - 16} bytes, expected {need - 16}",
                         offset=min(len(data), need))
    a = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float32)
    if not np.all(np.isfinite(a)):
        bad = int(np.flatnonzero(~np.isfinite(a.ravel()))[0])
        raise DGFIOError(f"{source}: non-finite sample", offset=16 + 4 * bad)
    return a


def write_dgf(image, path):
    _write_atomic(path, encode_dgf(image))


def read_dgf(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise DGFIOError(f"cannot read {path}: {exc}") from exc
    return decode_dgf(data, str(path))


def encode_pgm(image):
    a = check_image(image)
    h, w = a.shape
    q = np.floor(np.clip(a, 0.0, 1.0) * 65535.0 + 0.5).astype(">u2")
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes()


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def decode_pgm(data, source="<bytes>"):
    if data[:2] != b"P5":
        raise DGFIOError(f"{source}: not a binary PGM", offset=0)
    m = _PGM_HEADER.match(data)
    if not m:
        raise DGFIOError(f"{source}: malformed PGM header", offset=2)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise DGFIOError(f"{source}: only maxval 65535 is supported, got {maxval}", offset=m.start(3))
    if w == 0 or h == 0 or w * h > MAX_PIXELS:
        raise DGFIOError(f"{source}: invalid dimensions {w}x{h}", offset=m.start(1))
    start = m.end()
    need = start + 2 * w * h
    if len(data) < need:
        raise DGFIOError(f"{source}: truncated payload", offset=len(data))
    q = np.frombuffer(data, dtype=">u2", count=w * h, offset=start).reshape(h, w)
    return q.astype(np.float64) / 65535.0


def write_pgm(image, path):
    _write_atomic(path, encode_pgm(image))


def read_pgm(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise DGFIOError(f"cannot read {path}: {exc}") from exc
    return decode_pgm(data, str(path))


def write_image(image, path):
    """Write by extension: ``.pgm`` -> 16-bit PGM, anything else -> DGF1."""
    if str(path).lower().endswith(".pgm"):
        write_pgm(image, path)
    else:
        write_dgf(image, path)


def read_image(path):
    """Read a DGF1 or PGM file (sniffed from the magic bytes) as a float64 array."""
    try:
        with open(path, "rb") as f:
            head = f.read(4)
    except OSError as exc:
        raise DGFIOError(f"cannot read {path}: {exc}") from exc
    if head[:2] == b"P5":
        return read_pgm(path)
    return read_dgf(path).astype(np.float64)


# --------------------------------------------------------------------- datasets

MANIFEST = "manifest.csv"
MANIFEST_HEADER = ("id", "task", "degradation", "seed", "width", "height",
                   "input", "guide", "ground_truth", "mask")
_ROLES = ("input", "guide", "ground_truth", "mask")


def save_dataset(pairs, directory):
    """Write each pair as four DGF1 files plus ``manifest.csv``; returns the manifest path."""
    import csv
    import io

    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise DGFIOError(f"cannot create dataset directory {directory}: {exc}") from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for p in pairs:
        names = {role: f"{p.id}_{role}.dgf" for role in _ROLES}
        arrays = {"input": p.input, "guide": p.guide, "ground_truth": p.ground_truth,
                  "mask": p.mask.astype(np.float64)}
        for role in _ROLES:
            write_dgf(arrays[role], os.path.join(directory, names[role]))
        h, w_ = p.ground_truth.shape
        w.writerow([p.id, p.task, p.degradation, p.seed, w_, h] + [names[r] for r in _ROLES])
    path = os.path.join(directory, MANIFEST)
    _write_atomic(path, buf.getvalue().encode("utf-8"))
    return path


def load_dataset(directory):
    """Read a dataset written by :func:`save_dataset` (images as float64)."""
    import csv

    from .imaging import ImagePair

    path = os.path.join(directory, MANIFEST)
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise DGFIOError(f"cannot read manifest {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise DGFIOError(f"{path}: unexpected manifest header")
    pairs = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(MANIFEST_HEADER):
            raise DGFIOError(f"{path}: line {lineno} has {len(row)} fields")
        rec = dict(zip(MANIFEST_HEADER, row))
        imgs = {role: read_dgf(os.path.join(directory, rec[role])).astype(np.float64) for role in _ROLES}
        if imgs["ground_truth"].shape != (int(rec["height"]), int(rec["width"])):
            raise DGFIOError(f"{path}: line {lineno} dimensions disagree with {rec['ground_truth']}")
        try:
            pairs.append(ImagePair(imgs["input"], imgs["guide"], imgs["ground_truth"], imgs["mask"] > 0.5,
                                   rec["task"], rec["degradation"], int(rec["seed"]), rec["id"]))
        except ValueError as exc:
            raise DGFIOError(f"{path}: line {lineno}: {exc}") from None
    if not pairs:
        raise DGFIOError(f"{path}: empty dataset")
    return pairs
