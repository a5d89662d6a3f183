"""Linear RGB image files: 8/16-bit PNG and binary PPM (P6).

Pixel values are taken as linear light and scaled to [0, 1]; no transfer
curve is applied in either direction.
"""
from __future__ import annotations

import re
from pathlib import Path

import cv2
import numpy as np


class ImageFormatError(ValueError):
    pass


_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def _read_ppm(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    m = _PPM_HEADER.match(blob)
    if m is None:
        raise ImageFormatError(f"{path}: not a binary (P6) PPM file")
    width, height, maxval = (int(v) for v in m.groups())
    if maxval not in (255, 65535):
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval} (need 255 or 65535)")
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    count = width * height * 3
    if len(blob) - m.end() < count * dtype.itemsize:
        raise ImageFormatError(f"{path}: truncated PPM pixel data")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=m.end())
    return data.reshape(height, width, 3).astype(np.float32) / np.float32(maxval)


def _read_png(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"{path}: cannot decode PNG")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageFormatError(f"{path}: unsupported bit depth ({raw.dtype})")
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = raw[:, :, ::-1] if raw.shape[2] == 3 else raw
    return rgb.astype(np.float32) / np.float32(scale)


def load_image(path) -> np.ndarray:
    """Read a PNG or PPM file into an H x W x 3 float32 array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with path.open("rb") as fh:
        head = fh.read(8)
    if head.startswith(b"P6"):
        return _read_ppm(path)
    if head.startswith(b"\x89PNG"):
        return _read_png(path)
    raise ImageFormatError(f"{path}: unrecognized image format (expected PNG or P6 PPM)")


def save_image(path, img, bit_depth: int = 16) -> None:
    """Write ``img`` (values in [0, 1]) as PNG or PPM, chosen by suffix."""
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected an H x W x 3 image, got shape {img.shape}")
    if bit_depth not in (8, 16):
        raise ImageFormatError(f"unsupported bit depth {bit_depth}")
    maxval = 255 if bit_depth == 8 else 65535
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.uint8 if bit_depth == 8 else np.uint16)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        header = f"P6\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
        body = q.astype(">u2").tobytes() if bit_depth == 16 else q.tobytes()
        path.write_bytes(header + body)
    elif suffix == ".png":
        ok, buf = cv2.imencode(".png", q[:, :, ::-1])
        if not ok:
            raise OSError(f"failed to encode {path}")
        path.write_bytes(buf.tobytes())
    else:
        raise ImageFormatError(f"{path}: unknown image suffix (use .png or .ppm)")
