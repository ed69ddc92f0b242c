"""Full two-stage classifier: global saliency, ROI patches, gated
attention, and the fusion head.

The forward pass composes: global network -> saliency head ->
top-fraction pooling (global scores) -> greedy ROI retrieval -> patch
cropping -> local network -> gated attention -> weighted pooling ->
local head, and finally a fusion head over [GMP(global features),
pooled patch representation]. Patch selection is detached from the
graph; the global branch trains through the pooled saliency scores and
the fusion loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import GatedAttention, attention_pool, local_head
from .errors import ConfigError, ShapeError
from .networks import GlobalNetwork, Linear, LocalNetwork, NetworkConfig
from .roi import RoiWindow, crop_patches, retrieve_roi
from .saliency import SaliencyHead, pooled_scores
from .seeding import rng_for
from .augment import rotate_patch
from .tensor import Tensor


@dataclass
class ModelOutputs:
    """All head predictions plus the intermediate evidence for one batch."""

    y_global: Tensor  # [N,2] in [0,1]
    y_local: Tensor  # [N,2]
    y_fusion: Tensor  # [N,2]
    saliency: Tensor  # [N,2,h,w]
    windows: list[list[RoiWindow]]
    patches: np.ndarray  # [N,K,1,patch,patch]
    alpha: Tensor  # [N,K]


class GMIC:
    """Globally-aware multiple instance classifier."""

    def __init__(self, cfg: NetworkConfig, pool_fraction: float, seed: int = 0, dtype=np.float32):
        cfg.validate()
        if not 0.0 < pool_fraction <= 1.0:
            raise ConfigError(f"pool_fraction must lie in (0, 1], got {pool_fraction}")
        self.cfg = cfg
        self.pool_fraction = float(pool_fraction)
        self.dtype = np.dtype(dtype)
        rng = rng_for(seed, "init")
        self.global_net = GlobalNetwork(cfg, rng, dtype)
        self.saliency_head = SaliencyHead(self.global_net.out_channels, rng, dtype)
        self.local_net = LocalNetwork(cfg, rng, dtype)
        self.attention = GatedAttention(cfg.embed_dim, cfg.attention_dim, rng, dtype)
        self.w_local = Tensor(
            rng.normal(0.0, np.sqrt(1.0 / cfg.embed_dim), (cfg.embed_dim, 2)), requires_grad=True, dtype=dtype
        )
        self.fusion_head = Linear(self.global_net.out_channels + cfg.embed_dim, 2, rng, dtype, bias=True)

    # -- forward ---------------------------------------------------------

    def forward(
        self,
        x,
        training: bool = False,
        rot_rng: np.random.Generator | None = None,
        attention_mode: str = "gated",
        patch_mode: str = "roi",
        patch_rng: np.random.Generator | None = None,
        num_patches: int | None = None,
    ) -> ModelOutputs:
        """Run the full pipeline on a batch [N,1,H,W].

        ``rot_rng`` enables the train-time random quarter-turn rotation
        of patches. ``attention_mode='uniform'`` and
        ``patch_mode='random'`` are evaluation-time ablation switches.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x, dtype=self.dtype)
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input [N,1,{cfg.input_height},{cfg.input_width}], got {x.shape}")
        n = x.shape[0]
        k = cfg.num_patches if num_patches is None else int(num_patches)

        h_g = self.global_net(x, training)
        saliency = self.saliency_head(h_g)
        y_global = pooled_scores(saliency, self.pool_fraction)

        windows: list[list[RoiWindow]] = []
        patch_arrays = np.empty((n, k, 1, cfg.patch_size, cfg.patch_size), dtype=self.dtype)
        image_hw = (cfg.input_height, cfg.input_width)
        for i in range(n):
            if patch_mode == "roi":
                wins = retrieve_roi(saliency.data[i], k, cfg.window, image_hw, cfg.patch_size)
            elif patch_mode == "random":
                wins = self._random_windows(k, patch_rng)
            else:
                raise ConfigError(f"unknown patch_mode {patch_mode!r}")
            windows.append(wins)
            patch_arrays[i] = crop_patches(x.data[i, 0], wins, cfg.patch_size)
        if rot_rng is not None and training:
            for i in range(n):
                for j in range(k):
                    patch_arrays[i, j, 0] = rotate_patch(patch_arrays[i, j, 0], int(rot_rng.integers(0, 4)))

        flat = Tensor(patch_arrays.reshape(n * k, 1, cfg.patch_size, cfg.patch_size), dtype=self.dtype)
        emb = self.local_net(flat, training)
        emb3 = T.reshape(emb, (n, k, cfg.embed_dim))
        if attention_mode == "gated":
            alpha = self.attention(emb3)
        elif attention_mode == "uniform":
            alpha = Tensor(np.full((n, k), 1.0 / k), dtype=self.dtype)
        else:
            raise ConfigError(f"unknown attention_mode {attention_mode!r}")
        z = attention_pool(emb3, alpha)
        y_local = local_head(z, self.w_local)
        fused = T.concat([T.global_max_pool(h_g), z], axis=1)
        y_fusion = T.sigmoid(self.fusion_head(fused))
        return ModelOutputs(y_global, y_local, y_fusion, saliency, windows, patch_arrays, alpha)

    def _random_windows(self, k: int, rng: np.random.Generator | None) -> list[RoiWindow]:
        if rng is None:
            raise ConfigError("patch_mode='random' requires patch_rng")
        cfg = self.cfg
        gh, gw = cfg.grid
        wh, ww = cfg.window
        rows = gh - wh + 1
        cols = gw - ww + 1
        chosen = rng.choice(rows * cols, size=k, replace=False)
        d = cfg.downsample_factor
        wins = []
        for flat in chosen:
            gr, gc = divmod(int(flat), cols)
            pr = min(gr * d, cfg.input_height - cfg.patch_size)
            pc = min(gc * d, cfg.input_width - cfg.patch_size)
            wins.append(RoiWindow(gr, gc, pr, pc, 0.0))
        return wins

    # -- state -------------------------------------------------------------

    def _components(self):
        return (
            (self.global_net, "global"),
            (self.saliency_head, "saliency_head"),
            (self.local_net, "local"),
            (self.attention, "attention"),
        )

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for comp, prefix in self._components():
            out.update(dict(comp.named_parameters(prefix)))
        out["w_local"] = self.w_local
        out.update(dict(self.fusion_head.named_parameters("fusion_head")))
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for comp, prefix in self._components():
            out.update(dict(comp.named_buffers(prefix)))
        return out

    def state(self) -> dict[str, np.ndarray]:
        arrays = {name: t.data for name, t in self.parameters().items()}
        arrays.update({f"buffer/{name}": b for name, b in self.buffers().items()})
        return arrays

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        buffers = self.buffers()
        for name, value in arrays.items():
            if name.startswith("buffer/"):
                target = buffers.get(name[len("buffer/"):])
                if target is None:
                    raise ConfigError(f"checkpoint buffer {name!r} not present in this architecture")
                if target.shape != value.shape:
                    raise ConfigError(f"checkpoint buffer {name!r} shape {value.shape} != {target.shape}")
                target[...] = value
            else:
                tsr = params.get(name)
                if tsr is None:
                    raise ConfigError(f"checkpoint parameter {name!r} not present in this architecture")
                if tsr.shape != value.shape:
                    raise ConfigError(f"checkpoint parameter {name!r} shape {value.shape} != {tsr.shape}")
                tsr.data[...] = value.astype(tsr.dtype)

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None
