"""Saliency head, top-fraction pooling and the sparsity regularizer.

The head is a 1x1 convolution with sigmoid over the global feature map,
yielding one [0,1] map per class (channel 0 benign, channel 1
malignant). Class scores come from averaging the top t-fraction of each
map; the L1 term keeps the maps sparse.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .networks import Conv2d, NetworkConfig
from .tensor import Tensor

# Re-exported here because the pooling op is this module's public surface.
from .tensor import top_fraction_count, topk_mean_pool  # noqa: F401


class SaliencyHead:
    """1x1 conv + sigmoid: [N,C_g,h,w] -> [N,2,h,w] with entries in [0,1]."""

    def __init__(self, in_channels: int, rng, dtype=np.float32):
        self.conv = Conv2d(in_channels, 2, 1, 1, 0, rng, dtype)

    def __call__(self, h_g: Tensor) -> Tensor:
        return T.sigmoid(self.conv(h_g))

    def named_parameters(self, prefix: str = "saliency_head"):
        yield from self.conv.named_parameters(prefix)

    def named_buffers(self, prefix: str = "saliency_head"):
        return iter(())


def pooled_scores(saliency: Tensor, t: float) -> Tensor:
    """Per-class image-level scores [N,2] from saliency maps [N,2,h,w]."""
    return topk_mean_pool(saliency, t)


def l1_regularizer(saliency: Tensor) -> Tensor:
    """Sum of all saliency entries over both class maps.

    Entries are sigmoid outputs, hence nonnegative, so the absolute value
    is the entry itself and the gradient is 1 everywhere.
    """
    return T.sum_all(saliency)


def upsample_nearest(grid: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour upsampling of a 2-d map to (H, W)."""
    h, w = grid.shape
    oh, ow = out_hw
    rows = (np.arange(oh) * h) // oh
    cols = (np.arange(ow) * w) // ow
    return grid[rows][:, cols]


def saliency_to_u8(grid: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """8-bit image of a [0,1] saliency map at full image resolution."""
    up = upsample_nearest(np.asarray(grid, dtype=np.float64), out_hw)
    return np.clip(np.rint(up * 255.0), 0, 255).astype(np.uint8)
