"""Minimal binary PGM (P5, maxval 255) reader/writer."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pgm(path, image_u8: np.ndarray) -> None:
    img = np.asarray(image_u8)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError(f"write_pgm expects a 2-d uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval; '#' comments allowed between fields
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    img = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return img.reshape(h, w).copy()


def to_u8(image: np.ndarray) -> np.ndarray:
    """Quantize a [0,1] float image to uint8."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def to_float(image_u8: np.ndarray) -> np.ndarray:
    return np.asarray(image_u8, dtype=np.float32) / 255.0
