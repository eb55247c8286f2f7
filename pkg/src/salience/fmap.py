"""Single-file float32 raster container for feature and saliency maps.

Layout: magic b"FMAP", little-endian u32 height, width, channels, then
height*width*channels little-endian f32 values, one full plane per
channel (channel-major).
"""

import struct
from pathlib import Path

import numpy as np

from .imgproc import MalformedHeader, TruncatedPayload

MAGIC = b"FMAP"
_HEADER = struct.Struct("<III")


def write_fmap(path, planes) -> None:
    """Write one plane (h, w) or a stack (c, h, w) as float32."""
    planes = np.asarray(planes, dtype=np.float32)
    if planes.ndim == 2:
        planes = planes[None]
    if planes.ndim != 3 or min(planes.shape) < 1:
        raise ValueError(f"expected (channels, height, width), got {planes.shape}")
    c, h, w = planes.shape
    payload = np.ascontiguousarray(planes, dtype="<f4").tobytes()
    Path(path).write_bytes(MAGIC + _HEADER.pack(h, w, c) + payload)


def read_fmap(path) -> np.ndarray:
    """Read a raster back as a (channels, height, width) float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise MalformedHeader("not an FMAP raster")
    if len(raw) < 4 + _HEADER.size:
        raise TruncatedPayload("header cut short")
    h, w, c = _HEADER.unpack_from(raw, 4)
    if h < 1 or w < 1 or c < 1:
        raise MalformedHeader(f"bad dimensions {h}x{w}x{c}")
    need = 4 + _HEADER.size + 4 * h * w * c
    if len(raw) < need:
        raise TruncatedPayload(f"expected {need} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=16)
    return data.reshape(c, h, w).copy()
