"""On-disk sequence formats.

Two representations:

* Packed binary (.spb): a bit-exact container for 1-bit sequences mirroring
  a SPAD readout stream.  Little-endian header
  (magic "SPB1", u16 version, u32 height, u32 width, u32 frame count,
  f64 frame period in seconds) followed by the frames packed row-major,
  8 pixels per byte, MSB = leftmost pixel, each row padded up to a byte
  boundary.  File size is exactly header + frames * height * ceil(width/8).

* Frame directories: one grayscale PNG per frame, 8- or 16-bit, named
  frame_00000.png, frame_00001.png, ... so lexicographic order is temporal
  order.  Values in [0, 1] are linearly quantized to 2**depth - 1 codes on
  write and divided back out on read.  RGB sources are converted with the
  standard luma weights 0.299/0.587/0.114.
"""

import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .sensor import BinarySequence

PACKED_MAGIC = b"SPB1"
PACKED_VERSION = 1
_PACKED_HEADER = struct.Struct("<4sHIIId")

FRAME_PATTERN = "frame_{:05d}.png"
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class FormatError(ValueError):
    """Base class for on-disk format problems."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


def write_packed_binary(path, seq: BinarySequence):
    t, h, w = seq.frames.shape
    header = _PACKED_HEADER.pack(PACKED_MAGIC, PACKED_VERSION, h, w, t, seq.frame_period)
    packed = np.packbits(seq.frames, axis=-1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(packed.tobytes())


def read_packed_binary(path) -> BinarySequence:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PACKED_HEADER.size:
        raise TruncatedError(f"{path}: {len(data)} bytes is smaller than the header")
    magic, version, h, w, t, frame_period = _PACKED_HEADER.unpack_from(data)
    if magic != PACKED_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != PACKED_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    row_bytes = math.ceil(w / 8)
    expected = _PACKED_HEADER.size + t * h * row_bytes
    if len(data) != expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, found {len(data)}")
    packed = np.frombuffer(data, dtype=np.uint8, offset=_PACKED_HEADER.size)
    packed = packed.reshape(t, h, row_bytes)
    frames = np.unpackbits(packed, axis=-1, count=w)
    return BinarySequence(frames=frames, frame_period=frame_period)


def packed_file_size(t, h, w):
    """Exact size in bytes of a packed file with the given dimensions."""
    return _PACKED_HEADER.size + t * h * math.ceil(w / 8)


def write_frames(directory, frames, depth: int = 16):
    """Write a (T, H, W) [0, 1] sequence as zero-padded grayscale PNG frames."""
    if depth not in (8, 16):
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ValueError(f"frames must be (T, H, W), got shape {frames.shape}")
    if frames.min(initial=0.0) < 0.0 or frames.max(initial=0.0) > 1.0:
        raise ValueError("frame values must lie in [0, 1]")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    white = 2 ** depth - 1
    dtype = np.uint8 if depth == 8 else np.uint16
    for i, frame in enumerate(frames):
        codes = np.round(frame * white).astype(dtype)
        Image.fromarray(codes).save(directory / FRAME_PATTERN.format(i))


def read_frames(directory):
    """Read a frame directory back as ((T, H, W) float64 in [0, 1], depth)."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise FormatError(f"{directory}: no .png frames found")
    frames = []
    depth = None
    shape = None
    for p in paths:
        arr, bits = _load_gray(p)
        if shape is None:
            shape, depth = arr.shape, bits
        elif arr.shape != shape:
            raise FormatError(f"{p}: frame size {arr.shape} differs from {shape}")
        elif bits != depth:
            raise FormatError(f"{p}: bit depth {bits} differs from {depth}")
        frames.append(arr)
    white = 2 ** depth - 1
    return np.stack(frames) / white, depth


def _load_gray(path):
    img = Image.open(path)
    if img.mode in ("RGB", "RGBA"):
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
        gray = arr @ np.array(LUMA_WEIGHTS)
        return np.round(gray).astype(np.uint16), 8
    arr = np.asarray(img)
    if img.mode == "L":
        return arr.astype(np.uint16), 8
    if img.mode in ("I", "I;16"):
        return arr.astype(np.uint16), 16
    raise FormatError(f"{path}: unsupported image mode {img.mode!r}")
