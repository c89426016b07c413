"""Bit-exact PFM (float maps) and binary PPM (8-bit color) file I/O."""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def write_pfm(path, data) -> None:
    """Single-channel (H,W) or (1,H,W) maps become "Pf" files, three-channel
    (3,H,W) maps become "PF"; float32 payload, rows bottom-to-top, scale
    -1.0 marking little-endian."""
    a = np.asarray(getattr(data, "data", data), dtype=np.float32)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if not np.all(np.isfinite(a)):
        raise FormatError("PFM payload must be finite")
    if a.ndim == 2:
        magic = b"Pf"
        rows = a[::-1]
    elif a.ndim == 3 and a.shape[0] == 3:
        magic = b"PF"
        rows = np.moveaxis(a, 0, -1)[::-1]
    else:
        raise FormatError(f"unsupported map shape {a.shape}")
    h, w = rows.shape[0], rows.shape[1]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def _read_token(blob: bytes, offset: int):
    while offset < len(blob) and blob[offset:offset + 1].isspace():
        offset += 1
    start = offset
    while offset < len(blob) and not blob[offset:offset + 1].isspace():
        offset += 1
    if start == offset:
        raise FormatError(f"missing header token at byte {start}")
    # exactly one whitespace byte terminates a token
    return blob[start:offset], offset + 1


def read_pfm(path) -> np.ndarray:
    """Returns (H,W) for "Pf" files and (3,H,W) for "PF"."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, offset = _read_token(blob, 0)
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"bad PFM magic {magic!r} at byte 0")
    channels = 1 if magic == b"Pf" else 3
    try:
        wtok, offset = _read_token(blob, offset)
        htok, offset = _read_token(blob, offset)
        stok, offset = _read_token(blob, offset)
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except (ValueError, FormatError) as exc:
        raise FormatError(f"malformed PFM header: {exc}") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise FormatError(f"invalid PFM dimensions/scale at byte {offset}")
    count = w * h * channels
    need = count * 4
    if len(blob) - offset < need:
        raise FormatError(
            f"truncated PFM payload at byte {len(blob)}: need {need} bytes "
            f"from offset {offset}")
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    rows = flat.reshape(h, w, channels)[::-1]
    out = rows[:, :, 0] if channels == 1 else np.moveaxis(rows, -1, 0)
    return np.ascontiguousarray(out, dtype=np.float32)


def write_ppm(path, color) -> None:
    """Binary P6 with maxval 255; channel values in [0,1] are rounded
    half-up to bytes."""
    a = np.asarray(getattr(color, "data", color), dtype=float)
    if a.ndim != 3 or a.shape[0] != 3:
        raise FormatError(f"color image must have shape (3,H,W), got {a.shape}")
    if a.min() < 0.0 or a.max() > 1.0:
        raise FormatError("color values must lie in [0,1]")
    quantized = np.floor(a * 255.0 + 0.5).astype(np.uint8)
    h, w = a.shape[1], a.shape[2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n")
        fh.write(f"{w} {h}\n255\n".encode("ascii"))
        fh.write(np.moveaxis(quantized, 0, -1).tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns (3,H,W) floats in [0,1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, offset = _read_token(blob, 0)
    if magic != b"P6":
        raise FormatError(f"unsupported PPM magic {magic!r} at byte 0 "
                          "(only binary P6 is handled)")
    try:
        wtok, offset = _read_token(blob, offset)
        htok, offset = _read_token(blob, offset)
        mtok, offset = _read_token(blob, offset)
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except (ValueError, FormatError) as exc:
        raise FormatError(f"malformed PPM header: {exc}") from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval} at byte {offset}")
    need = w * h * 3
    if len(blob) - offset < need:
        raise FormatError(
            f"truncated PPM payload at byte {len(blob)}: need {need} bytes "
            f"from offset {offset}")
    flat = np.frombuffer(blob, dtype=np.uint8, count=need, offset=offset)
    return np.moveaxis(flat.reshape(h, w, 3), -1, 0).astype(float) / 255.0
