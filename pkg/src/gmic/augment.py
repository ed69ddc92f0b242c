"""Image-space augmentation: random translate+scale, patch rotation,
per-image standardization.

The translate/scale transform resamples with nearest neighbour around
the image center and fills uncovered pixels with zero; masks are
resampled with exactly the same index map so they co-move with the
image. A zero-magnitude draw is the identity mapping, exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def sample_transform(rng: np.random.Generator, translate_frac: float, scale_amp: float,
                     hw: tuple[int, int]) -> tuple[float, float, float]:
    """Draw (scale, row shift, col shift). Draws always consume the same
    number of variates so streams stay aligned across magnitude settings."""
    s = rng.uniform(1.0 - scale_amp, 1.0 + scale_amp)
    ty = rng.uniform(-translate_frac, translate_frac) * hw[0]
    tx = rng.uniform(-translate_frac, translate_frac) * hw[1]
    return s, ty, tx


def apply_transform(image: np.ndarray, transform: tuple[float, float, float],
                    masks: list[np.ndarray] | None = None):
    """Resample ``image`` (and optional masks, identically) under an
    isotropic scale about the center plus a translation."""
    s, ty, tx = transform
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    src_r = np.rint((np.arange(h) - cy) / s + cy - ty).astype(np.int64)
    src_c = np.rint((np.arange(w) - cx) / s + cx - tx).astype(np.int64)
    valid_r = (src_r >= 0) & (src_r < h)
    valid_c = (src_c >= 0) & (src_c < w)
    rr = np.clip(src_r, 0, h - 1)
    cc = np.clip(src_c, 0, w - 1)

    def remap(arr):
        out = arr[rr][:, cc].copy()
        out[~valid_r, :] = 0
        out[:, ~valid_c] = 0
        return out

    out_img = remap(image)
    if masks is None:
        return out_img
    return out_img, [remap(m) for m in masks]


def augment(image: np.ndarray, masks: list[np.ndarray] | None, rng: np.random.Generator,
            translate_frac: float = 0.06, scale_amp: float = 0.05):
    """One random translate+scale draw applied to image and masks."""
    tf = sample_transform(rng, translate_frac, scale_amp, image.shape)
    return apply_transform(image, tf, masks)


def rotate_patch(patch: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Exact rotation of a square patch by quarter_turns * 90 degrees."""
    if patch.shape[-2] != patch.shape[-1]:
        raise ShapeError(f"rotate_patch requires a square patch, got {patch.shape}")
    if quarter_turns % 4 == 0:
        return patch.copy()
    return np.ascontiguousarray(np.rot90(patch, k=quarter_turns % 4, axes=(-2, -1)))


def standardize(image: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance version of one image (float32)."""
    x = np.asarray(image, dtype=np.float32)
    mu = x.mean()
    sd = x.std()
    return (x - mu) / (sd + 1e-8)
