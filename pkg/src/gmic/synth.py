"""Synthetic planted-lesion dataset generator.

Images imitate the coarse structure of a breast X-ray at desk scale:
a half-elliptical bright support against the left edge filled with
smooth multi-octave noise, near-black elsewhere. Benign findings are
smooth bright Gaussian blobs; malignant findings are clusters of tiny
bright specks over a high-frequency textured disk, so they are
distinguished by texture rather than mean brightness. Ground-truth
masks are exact: a mask marks precisely the pixels whose value was
changed by the planted lesion (deltas below a fixed cutoff are not
applied at all, which keeps the property true after 8-bit
quantization).

Determinism: every exam draws from rng streams keyed by
(seed, exam index), so generation order or parallelism cannot change
the output. The two views of an exam share the label but are rendered
independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Exam, Split, View, VIEW_NAMES
from .errors import ConfigError
from .seeding import rng_for

# Deltas at or below this magnitude are not applied; masks therefore
# survive 8-bit quantization (cutoff * 255 > 2).
DELTA_CUTOFF = 0.01

_BORDER_MARGIN = 14  # keeps lesions in frame under train-time translation


@dataclass(frozen=True)
class SynthConfig:
    height: int = 128
    width: int = 128
    n_train: int = 2000
    n_val: int = 400
    n_test: int = 400
    prevalence_benign: float = 0.12
    prevalence_malignant: float = 0.10
    benign_amplitude: tuple[float, float] = (0.15, 0.30)
    benign_sigma: tuple[float, float] = (3.5, 6.5)  # blob size range, px
    malignant_radius: tuple[float, float] = (5.0, 9.0)  # cluster size range, px
    speck_count: tuple[int, int] = (4, 9)
    speck_amplitude: tuple[float, float] = (0.25, 0.45)
    speck_sigma: tuple[float, float] = (0.8, 1.4)
    texture_amplitude: tuple[float, float] = (0.04, 0.11)
    noise_octaves: int = 4
    contrast: float = 1.0
    seed: int = 0

    @property
    def n_exams(self) -> int:
        return self.n_train + self.n_val + self.n_test

    def validate(self) -> None:
        for name in ("prevalence_benign", "prevalence_malignant"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.height < 32 or self.width < 32:
            raise ConfigError(f"image dims ({self.height},{self.width}) too small, need >= 32")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.noise_octaves < 1:
            raise ConfigError(f"noise_octaves must be >= 1, got {self.noise_octaves}")
        if self.contrast <= 0:
            raise ConfigError(f"contrast must be > 0, got {self.contrast}")
        max_extent = max(
            self.benign_sigma[1] * math.sqrt(2.0 * math.log(self.benign_amplitude[1] / DELTA_CUTOFF)),
            self.malignant_radius[1] + 4.0,
        )
        if 2 * (max_extent + _BORDER_MARGIN) >= min(self.height, self.width):
            raise ConfigError(
                f"largest lesion (extent ~{max_extent:.0f}px) does not fit a "
                f"{self.height}x{self.width} image with margin {_BORDER_MARGIN}"
            )


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = grid.shape
    r = np.linspace(0.0, gh - 1.0, h)
    c = np.linspace(0.0, gw - 1.0, w)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, gh - 1)
    c1 = np.minimum(c0 + 1, gw - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    g00 = grid[r0][:, c0]
    g01 = grid[r0][:, c1]
    g10 = grid[r1][:, c0]
    g11 = grid[r1][:, c1]
    return (g00 * (1 - fr) * (1 - fc) + g01 * (1 - fr) * fc + g10 * fr * (1 - fc) + g11 * fr * fc)


def _octave_noise(rng: np.random.Generator, h: int, w: int, octaves: int) -> np.ndarray:
    """Sum of bilinearly upsampled coarse noise grids, roughly in [-1,1]."""
    out = np.zeros((h, w), dtype=np.float64)
    amp = 0.55
    cell = max(h, w) // 4
    for _ in range(octaves):
        gh = max(h // max(cell, 1) + 2, 2)
        gw = max(w // max(cell, 1) + 2, 2)
        out += amp * _bilinear_upsample(rng.uniform(-1.0, 1.0, (gh, gw)), h, w)
        amp *= 0.5
        cell = max(cell // 2, 1)
    return out


def _render_background(cfg: SynthConfig, rng: np.random.Generator):
    """Breast-like support plus textured interior.

    Returns (image float64, interior mask used for lesion placement)."""
    h, w = cfg.height, cfg.width
    cy = h / 2.0 + rng.uniform(-0.05, 0.05) * h
    ry = rng.uniform(0.42, 0.50) * h
    rx = rng.uniform(0.62, 0.78) * w
    yy = (np.arange(h)[:, None] - cy) / ry
    xx = np.arange(w)[None, :] / rx
    q = yy * yy + xx * xx
    support = np.clip((1.0 - q) * 4.0, 0.0, 1.0)
    noise = _octave_noise(rng, h, w, cfg.noise_octaves)
    base = support * (0.42 + 0.18 * cfg.contrast * np.clip(noise, -1.0, 1.0)) + 0.02
    interior = q <= 0.55
    return base, interior


def _border_margin(cfg: SynthConfig) -> int:
    # keeps lesions in frame under train-time translate+scale augmentation
    return max(8, int(round(0.11 * min(cfg.height, cfg.width))))


def _placement(cfg: SynthConfig, rng: np.random.Generator, interior: np.ndarray,
               extent: float, taken: list[tuple[float, float, float]]):
    """Uniformly sample a lesion center deep inside the support, away from
    image borders and not overlapping previously placed lesions (their
    deltas must stay disjoint so masks remain exact). Raises when no
    placement exists or 100 draws all collide."""
    h, w = cfg.height, cfg.width
    margin = _border_margin(cfg) + int(math.ceil(extent))
    valid = np.zeros_like(interior)
    if margin < h - margin and margin < w - margin:
        valid[margin : h - margin, margin : w - margin] = interior[margin : h - margin, margin : w - margin]
    candidates = np.flatnonzero(valid)
    for _ in range(100):
        if len(candidates) == 0:
            break
        flat = int(candidates[rng.integers(len(candidates))])
        r, c = divmod(flat, w)
        r = r + rng.random()
        c = c + rng.random()
        if any(math.hypot(r - tr, c - tc) < extent + te + 2.0 for tr, tc, te in taken):
            # drop every candidate colliding with existing lesions, then retry
            rows, cols = np.divmod(candidates, w)
            keep = np.ones(len(candidates), dtype=bool)
            for tr, tc, te in taken:
                keep &= (rows - tr) ** 2 + (cols - tc) ** 2 >= (extent + te + 2.0) ** 2
            candidates = candidates[keep]
            continue
        taken.append((r, c, extent))
        return r, c
    raise ConfigError("infeasible lesion placement after 100 attempts; relax lesion sizes or prevalences")


def _benign_delta(cfg: SynthConfig, rng: np.random.Generator, interior, taken, hw):
    """Smooth bright Gaussian blob; returns the additive delta image."""
    h, w = hw
    amp = rng.uniform(*cfg.benign_amplitude)
    sigma = rng.uniform(*cfg.benign_sigma)
    extent = sigma * math.sqrt(2.0 * math.log(amp / DELTA_CUTOFF))
    r0, c0 = _placement(cfg, rng, interior, extent, taken)
    yy = np.arange(h)[:, None] - r0
    xx = np.arange(w)[None, :] - c0
    delta = amp * np.exp(-(yy * yy + xx * xx) / (2.0 * sigma * sigma))
    delta[delta <= DELTA_CUTOFF] = 0.0
    return delta


def _malignant_delta(cfg: SynthConfig, rng: np.random.Generator, interior, taken, hw):
    """Speck cluster over a high-frequency textured disk."""
    h, w = hw
    radius = rng.uniform(*cfg.malignant_radius)
    r0, c0 = _placement(cfg, rng, interior, radius + 4.0, taken)
    yy = np.arange(h)[:, None] - r0
    xx = np.arange(w)[None, :] - c0
    rr = np.sqrt(yy * yy + xx * xx)
    disk = rr <= radius
    lo, hi = cfg.texture_amplitude
    mag = rng.uniform(lo, hi, (h, w))
    sign = np.where(rng.random((h, w)) < 0.5, -1.0, 1.0)
    delta = np.where(disk, sign * mag, 0.0)
    n_specks = int(rng.integers(cfg.speck_count[0], cfg.speck_count[1] + 1))
    for _ in range(n_specks):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(0.0, 0.7 * radius)
        sr = r0 + dist * math.sin(ang)
        sc = c0 + dist * math.cos(ang)
        samp = rng.uniform(*cfg.speck_amplitude)
        ssig = rng.uniform(*cfg.speck_sigma)
        sy = np.arange(h)[:, None] - sr
        sx = np.arange(w)[None, :] - sc
        delta += samp * np.exp(-(sy * sy + sx * sx) / (2.0 * ssig * ssig))
    delta[np.abs(delta) <= DELTA_CUTOFF] = 0.0
    return delta


def _quantize(image: np.ndarray) -> np.ndarray:
    """Collapse to the exact grid of 8-bit PGM values (float32)."""
    return (np.rint(np.clip(image, 0.0, 1.0) * 255.0) / np.float32(255.0)).astype(np.float32)


def generate_exam(cfg: SynthConfig, exam_index: int, plant_lesions: bool = True) -> Exam:
    """Render one two-view exam. ``plant_lesions=False`` renders the same
    backgrounds and labels but applies no lesion, for differential tests."""
    label_rng = rng_for(cfg.seed, "synth-label", exam_index)
    y_b = int(label_rng.random() < cfg.prevalence_benign)
    y_m = int(label_rng.random() < cfg.prevalence_malignant)
    breast_id = f"b{exam_index:06d}"
    exam = Exam(exam_id=breast_id, breast_id=breast_id, y_benign=y_b, y_malignant=y_m)
    hw = (cfg.height, cfg.width)
    for v, view_name in enumerate(VIEW_NAMES):
        bg_rng = rng_for(cfg.seed, "synth-bg", exam_index, v)
        lesion_rng = rng_for(cfg.seed, "synth-lesion", exam_index, v)
        base, interior = _render_background(cfg, bg_rng)
        taken: list[tuple[float, float, float]] = []
        delta_b = _benign_delta(cfg, lesion_rng, interior, taken, hw) if y_b else None
        delta_m = _malignant_delta(cfg, lesion_rng, interior, taken, hw) if y_m else None
        image = base.copy()
        mask_b = mask_m = None
        if plant_lesions and delta_b is not None:
            image += delta_b
            mask_b = np.abs(delta_b) > DELTA_CUTOFF
        if plant_lesions and delta_m is not None:
            image += delta_m
            mask_m = np.abs(delta_m) > DELTA_CUTOFF
        exam.views.append(View(view_name=view_name, image=_quantize(image),
                               mask_benign=mask_b, mask_malignant=mask_m))
    return exam


def generate(cfg: SynthConfig) -> Dataset:
    """Render the train/val/test splits, disjoint by breast id."""
    cfg.validate()
    bounds = np.cumsum([0, cfg.n_train, cfg.n_val, cfg.n_test])
    splits = []
    for s in range(3):
        exams = [generate_exam(cfg, i) for i in range(bounds[s], bounds[s + 1])]
        splits.append(Split(exams))
    return Dataset(*splits)
