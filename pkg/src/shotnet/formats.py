"""On-disk formats.

Weight container (``NTW2``), little-endian::

    b"NTW2" | u32 version=1 | u32 count
    per tensor: u16 name_len | name (UTF-8) | u8 rank | rank x u32 dims | float32 data (row-major)

Raw frame file (``NFRM``), little-endian::

    b"NFRM" | u32 frames | u16 width | u16 height | frames x height x width x 3 u8 (RGB)

Text formats:

* transitions / ground truth: one ``start end`` pair per line (inclusive);
  a hard cut between frames i and i+1 is written ``i i+1``.
* scenes: one ``start end`` pair per line (inclusive).
* confidences: CSV with header ``frame,single,all``.
* annotations: ``video_id start end`` per line.

All writers go through :func:`atomic_write` (temporary file + rename), so a
failure never leaves a partial output behind.
"""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import Tensor

WEIGHTS_MAGIC = b"NTW2"
WEIGHTS_VERSION = 1
FRAMES_MAGIC = b"NFRM"


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a sibling temp file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# weights
# --------------------------------------------------------------------------

def encode_weights(params):
    """Serialise an ordered ``{name: Tensor | ndarray}`` map to NTW2 bytes."""
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<II", WEIGHTS_VERSION, len(params)))
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise FormatError(f"tensor {name!r} rank {arr.ndim} exceeds 255")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


def decode_weights(buf, requires_grad=True):
    """Parse NTW2 bytes into an ordered ``{name: Tensor}`` map.

    Tensors named ``*moving_mean`` / ``*moving_var`` get ``requires_grad=False``.
    """
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("weight container truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != WEIGHTS_MAGIC:
        raise FormatError("not a weight container (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weight container version {version}")
    params = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid UTF-8") from exc
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
        if name in params:
            raise FormatError(f"duplicate tensor name {name!r}")
        grad = requires_grad and not name.endswith(("moving_mean", "moving_var"))
        params[name] = Tensor(data, requires_grad=grad, name=name)
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return params


def save_weights(path, params):
    atomic_write(path, encode_weights(params))


def load_weights(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weights {path}: {exc.strerror}") from exc
    return decode_weights(buf)


# --------------------------------------------------------------------------
# frames
# --------------------------------------------------------------------------

def encode_frames(frames):
    """(N, H, W, 3) float in [0, 1] (or uint8) -> NFRM bytes."""
    arr = np.asarray(frames)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise FormatError(f"frames must have shape (N, H, W, 3), got {arr.shape}")
    n, h, w, _ = arr.shape
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    return FRAMES_MAGIC + struct.pack("<IHH", n, w, h) + np.ascontiguousarray(arr).tobytes()


def decode_frames(buf, as_uint8=False):
    """NFRM bytes -> (N, H, W, 3) float32 in [0, 1] (or raw uint8)."""
    if len(buf) < 12 or bytes(buf[:4]) != FRAMES_MAGIC:
        raise FormatError("not a frame file (bad magic)")
    n, w, h = struct.unpack("<IHH", bytes(buf[4:12]))
    expected = 12 + n * h * w * 3
    if len(buf) != expected:
        raise FormatError(f"frame file size {len(buf)} != expected {expected}")
    arr = np.frombuffer(buf, dtype=np.uint8, offset=12).reshape(n, h, w, 3)
    if as_uint8:
        return arr.copy()
    return arr.astype(np.float32) / np.float32(255.0)


def save_frames(path, frames):
    atomic_write(path, encode_frames(frames))


def load_frames(path, as_uint8=False):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read frames {path}: {exc.strerror}") from exc
    return decode_frames(buf, as_uint8=as_uint8)


def load_ppm_dir(directory, size=(48, 27)):
    """Binary P6 pixmaps in lexicographic order, bilinearly resized to ``size`` (W, H)."""
    from PIL import Image

    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".ppm", ".pnm"))
    if not paths:
        raise FormatError(f"no .ppm files in {directory}")
    frames = []
    for p in paths:
        try:
            with Image.open(p) as img:
                if img.format != "PPM":
                    raise FormatError(f"{p} is not a portable pixmap")
                img = img.convert("RGB")
                if img.size != tuple(size):
                    img = img.resize(tuple(size), Image.BILINEAR)
                frames.append(np.asarray(img, dtype=np.uint8))
        except OSError as exc:
            raise FormatError(f"cannot read {p}: {exc}") from exc
    return np.stack(frames).astype(np.float32) / np.float32(255.0)


def load_video(path):
    """NFRM file or directory of P6 pixmaps -> (N, H, W, 3) float32."""
    path = Path(path)
    if path.is_dir():
        return load_ppm_dir(path)
    return load_frames(path)


def encode_ppm(image):
    img = np.asarray(image, dtype=np.uint8)
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(img).tobytes()


def save_ppm(path, image):
    atomic_write(path, encode_ppm(image))


# --------------------------------------------------------------------------
# text formats
# --------------------------------------------------------------------------

def format_intervals(intervals):
    return "".join(f"{int(s)} {int(e)}\n" for s, e in intervals)


def parse_intervals(text, source="<text>"):
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{source}:{lineno}: expected 'start end', got {line!r}")
        try:
            s, e = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-integer interval {line!r}") from None
        if e < s or s < 0:
            raise FormatError(f"{source}:{lineno}: invalid interval {s} {e}")
        out.append((s, e))
    return out


def load_intervals(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_intervals(text, str(path))


def format_confidences(single, all_):
    buf = io.StringIO()
    buf.write("frame,single,all\n")
    for i, (s, a) in enumerate(zip(single, all_)):
        buf.write(f"{i},{float(s):.6f},{float(a):.6f}\n")
    return buf.getvalue()


def load_confidences(path):
    """Confidence CSV -> (single, all) float arrays indexed by frame."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows or set(rows[0]) != {"frame", "single", "all"}:
        raise FormatError(f"{path}: expected header 'frame,single,all'")
    try:
        rows.sort(key=lambda r: int(r["frame"]))
        frames = [int(r["frame"]) for r in rows]
        single = np.array([float(r["single"]) for r in rows])
        all_ = np.array([float(r["all"]) for r in rows])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from None
    if frames != list(range(len(frames))):
        raise FormatError(f"{path}: frame column must be 0..N-1")
    return single, all_


def parse_annotations(text, source="<text>"):
    """``video_id start end`` lines -> {video_id: [(start, end), ...]}."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{source}:{lineno}: expected 'video_id start end', got {line!r}")
        try:
            s, e = int(parts[1]), int(parts[2])
        except ValueError:
            raise FormatError(f"{source}:{lineno}: non-integer span {line!r}") from None
        if e < s or s < 0:
            raise FormatError(f"{source}:{lineno}: invalid span {s} {e}")
        out.setdefault(parts[0], []).append((s, e))
    return out
