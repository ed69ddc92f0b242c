"""Greedy ROI retrieval from saliency maps, and patch cropping.

Each class map is min-max normalized and the two are summed into a
single relevance map. K windows are then chosen greedily: every round
scores all window positions by the sum of map values under the window,
takes the argmax (ties broken by row-major order of the top-left
corner), and zeroes the chosen window's cells so later rounds cannot
reuse them. Selection is deliberately non-differentiable; no gradient
flows through patch coordinates.

All arithmetic runs in float64 and every window sum accumulates its
cells left-to-right in row-major order, so results are bit-identical to
a direct enumerate-score-zero reference using the same accumulation
order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class RoiWindow:
    """One selected window: saliency-grid and image-pixel coordinates of
    its top-left corner, plus the criterion value it was chosen at."""

    grid_row: int
    grid_col: int
    pixel_row: int
    pixel_col: int
    criterion_value: float


def minmax_normalize(a: np.ndarray) -> np.ndarray:
    """(a - min) / (max - min); all zeros when the range is degenerate."""
    a = np.asarray(a, dtype=np.float64)
    lo = a.min()
    span = a.max() - lo
    if span <= 1e-12:
        return np.zeros_like(a)
    return (a - lo) / span


def _window_sums(a: np.ndarray, wh: int, ww: int) -> np.ndarray:
    """Sliding-window sums over all top-left positions; each window's
    cells accumulate left-to-right in row-major order (the reference
    accumulation order for exact-match comparisons)."""
    h, w = a.shape
    out = np.zeros((h - wh + 1, w - ww + 1), dtype=a.dtype)
    for i in range(wh):
        for j in range(ww):
            out += a[i : i + h - wh + 1, j : j + w - ww + 1]
    return out


def retrieve_roi(
    saliency: np.ndarray,
    num_patches: int,
    window: tuple[int, int],
    image_hw: tuple[int, int],
    patch_size: int,
) -> list[RoiWindow]:
    """Greedily select ``num_patches`` windows from class maps [2,h,w]."""
    saliency = np.asarray(saliency, dtype=np.float64)
    if saliency.ndim != 3:
        raise ConfigError(f"retrieve_roi expects class maps [C,h,w], got shape {saliency.shape}")
    _, h, w = saliency.shape
    wh, ww = window
    if wh > h or ww > w:
        raise ConfigError(f"ROI window {window} does not fit grid ({h},{w})")
    positions = (h - wh + 1) * (w - ww + 1)
    if num_patches < 1 or num_patches > positions:
        raise ConfigError(f"num_patches {num_patches} outside [1, {positions}] for grid ({h},{w})")
    combined = np.zeros((h, w), dtype=np.float64)
    for c in range(saliency.shape[0]):
        combined += minmax_normalize(saliency[c])

    ih, iw = image_hw
    row_scale = ih // h
    col_scale = iw // w
    selected: list[RoiWindow] = []
    for _ in range(num_patches):
        crit = _window_sums(combined, wh, ww)
        flat_idx = int(crit.argmax())  # first max in row-major order
        gr, gc = divmod(flat_idx, crit.shape[1])
        value = float(crit[gr, gc])
        pr = min(gr * row_scale, ih - patch_size)
        pc = min(gc * col_scale, iw - patch_size)
        selected.append(RoiWindow(gr, gc, pr, pc, value))
        combined[gr : gr + wh, gc : gc + ww] = 0.0
    return selected


def crop_patches(image: np.ndarray, windows: list[RoiWindow], patch_size: int) -> np.ndarray:
    """Cut [K,1,patch,patch] copies of ``image`` ([H,W]) at the selected
    pixel positions."""
    image = np.asarray(image)
    k = len(windows)
    out = np.empty((k, 1, patch_size, patch_size), dtype=image.dtype)
    for i, win in enumerate(windows):
        out[i, 0] = image[win.pixel_row : win.pixel_row + patch_size, win.pixel_col : win.pixel_col + patch_size]
    return out
