"""Binary PPM heatmaps with a fixed blue-to-red colormap."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def colormap(n: int = 256) -> np.ndarray:
    """[n, 3] uint8 ramp: blue -> cyan -> yellow -> red."""
    x = np.linspace(0.0, 1.0, n)
    r = np.clip(2.0 * x - 0.5, 0, 1)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0, 1)
    b = np.clip(1.5 - 2.0 * x, 0, 1)
    return np.round(np.stack([r, g, b], axis=1) * 255).astype(np.uint8)


_CMAP = colormap()


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".txt")


def render_heatmap(field, path, scale: int = 1) -> Path:
    """Write a [H, W] field as a P6 image, each cell a scale x scale block.

    The colour range spans the field's own min and max, which go to a text
    file next to the image (same name, ``.txt``). A constant field maps to
    the first colour.
    """
    a = np.asarray(field, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"heatmap needs a non-empty 2-D field, got shape {a.shape}")
    if int(scale) != scale or scale < 1:
        raise ValueError("scale must be a positive integer")
    lo, hi = float(a.min()), float(a.max())
    span = hi - lo
    idx = np.zeros(a.shape, dtype=np.intp) if span == 0 else np.round((a - lo) / span * 255).astype(np.intp)
    rgb = _CMAP[idx]
    rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    path = Path(path)
    H, W = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())
    sidecar_path(path).write_text(f"min {lo!r}\nmax {hi!r}\n")
    return path


def read_ppm(path) -> np.ndarray:
    """Parse a P6 file written by :func:`render_heatmap` into [H, W, 3] uint8."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a P6 image")
    W, H = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(H, W, 3)
