"""Inference visualization: ROI overlay, per-class saliency images,
patch crops and a JSON record of attention weights and scores."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .augment import standardize
from .pgm import to_u8, write_pgm
from .saliency import saliency_to_u8


def draw_windows(image_u8: np.ndarray, windows, patch_size: int, border: int = 2) -> np.ndarray:
    """White rectangle borders marking each selected window."""
    out = image_u8.copy()
    h, w = out.shape
    for win in windows:
        r0, c0 = win.pixel_row, win.pixel_col
        r1 = min(r0 + patch_size, h)
        c1 = min(c0 + patch_size, w)
        out[r0 : r0 + border, c0:c1] = 255
        out[max(r1 - border, 0) : r1, c0:c1] = 255
        out[r0:r1, c0 : c0 + border] = 255
        out[r0:r1, max(c1 - border, 0) : c1] = 255
    return out


def save_visualization(model, image: np.ndarray, out_dir, stem: str = "viz") -> dict:
    """Run the model on one raw [H,W] image in [0,1] and write the
    overlay, both saliency maps, the K patch crops and a JSON record.

    Returns the record (attention weights, windows, head scores)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    x = standardize(image)[None, None, :, :]
    from . import tensor as T

    with T.no_grad():
        outputs = model.forward(x, training=False)
    windows = outputs.windows[0]
    hw = image.shape
    image_u8 = to_u8(image)

    write_pgm(out_dir / f"{stem}_input.pgm", draw_windows(image_u8, windows, model.cfg.patch_size))
    write_pgm(out_dir / f"{stem}_saliency_benign.pgm", saliency_to_u8(outputs.saliency.data[0, 0], hw))
    write_pgm(out_dir / f"{stem}_saliency_malignant.pgm", saliency_to_u8(outputs.saliency.data[0, 1], hw))
    for k, win in enumerate(windows):
        crop = image_u8[win.pixel_row : win.pixel_row + model.cfg.patch_size,
                        win.pixel_col : win.pixel_col + model.cfg.patch_size]
        write_pgm(out_dir / f"{stem}_patch_{k}.pgm", crop)

    record = {
        "alpha": [float(a) for a in outputs.alpha.data[0]],
        "windows": [
            {"grid_row": w.grid_row, "grid_col": w.grid_col,
             "pixel_row": w.pixel_row, "pixel_col": w.pixel_col,
             "criterion_value": w.criterion_value}
            for w in windows
        ],
        "scores": {
            "global": [float(v) for v in outputs.y_global.data[0]],
            "local": [float(v) for v in outputs.y_local.data[0]],
            "fusion": [float(v) for v in outputs.y_fusion.data[0]],
        },
        "files": {
            "input_overlay": f"{stem}_input.pgm",
            "saliency_benign": f"{stem}_saliency_benign.pgm",
            "saliency_malignant": f"{stem}_saliency_malignant.pgm",
            "patches": [f"{stem}_patch_{k}.pgm" for k in range(len(windows))],
        },
    }
    with open(out_dir / f"{stem}.json", "w") as f:
        json.dump(record, f, indent=2)
    return record
