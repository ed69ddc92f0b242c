"""Global and local feature networks.

The global network is a narrow residual stack that downsamples the
input by a fixed factor D and yields the coarse feature map the
saliency head reads. The local network is a wider residual net that
embeds fixed-size image patches into L-dimensional vectors. Both are
built from pre-activation residual blocks; all downsampling is done by
stride-2 convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

LOCAL_VARIANTS = {
    # variant -> (blocks per stage, bottleneck?)
    "tiny-18-like": ((2, 2, 2, 2), False),
    "tiny-34-like": ((3, 4, 6, 3), False),
    "tiny-50-like": ((3, 4, 6, 3), True),
}

BOTTLENECK_EXPANSION = 4


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters for both networks.

    The saliency grid is (input_height/D, input_width/D); the ROI window
    on that grid is patch_size/D on a side, so both divisibility
    invariants below keep the grid-to-pixel mapping exact integer
    arithmetic.
    """

    input_height: int = 128
    input_width: int = 128
    downsample_factor: int = 16
    first_conv: tuple[int, int, int] = (5, 2, 2)  # kernel, stride, padding
    stage_strides: tuple[int, ...] = (2, 2, 2, 1, 1)
    block_channels: tuple[int, ...] = (8, 16, 24, 32, 48)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1, 1)
    local_variant: str = "tiny-18-like"
    local_channels: tuple[int, ...] = (16, 32, 64, 128)
    local_first_conv: tuple[int, int, int] = (5, 2, 2)
    patch_size: int = 32
    num_patches: int = 6
    embed_dim: int = 128
    attention_dim: int = 32

    @property
    def grid(self) -> tuple[int, int]:
        return (self.input_height // self.downsample_factor, self.input_width // self.downsample_factor)

    @property
    def window(self) -> tuple[int, int]:
        side = self.patch_size // self.downsample_factor
        return (side, side)

    @property
    def global_channels(self) -> int:
        return self.block_channels[-1]

    def validate(self) -> None:
        d = self.downsample_factor
        if d < 1:
            raise ConfigError(f"downsample_factor must be >= 1, got {d}")
        if self.input_height % d or self.input_width % d:
            raise ConfigError(
                f"input dims ({self.input_height},{self.input_width}) must be divisible by downsample_factor {d}"
            )
        if self.patch_size % d:
            raise ConfigError(f"patch_size {self.patch_size} must be divisible by downsample_factor {d}")
        if not (len(self.block_channels) == len(self.blocks_per_stage) == len(self.stage_strides)):
            raise ConfigError("block_channels, blocks_per_stage and stage_strides must have equal length")
        total_stride = self.first_conv[1] * int(np.prod(self.stage_strides))
        if total_stride != d:
            raise ConfigError(f"product of strides {total_stride} does not equal downsample_factor {d}")
        if self.num_patches < 1:
            raise ConfigError(f"num_patches must be >= 1, got {self.num_patches}")
        if self.embed_dim < 1 or self.attention_dim < 1:
            raise ConfigError("embed_dim and attention_dim must be >= 1")
        if self.local_variant not in LOCAL_VARIANTS:
            raise ConfigError(f"unknown local_variant {self.local_variant!r}; expected one of {sorted(LOCAL_VARIANTS)}")
        gh, gw = self.grid
        wh, ww = self.window
        if wh > gh or ww > gw:
            raise ConfigError(f"ROI window {self.window} does not fit the saliency grid {self.grid}")
        positions = (gh - wh + 1) * (gw - ww + 1)
        if self.num_patches > positions:
            raise ConfigError(f"num_patches {self.num_patches} exceeds the {positions} available grid windows")


# Laptop-scale default: preserves the full-scale ratios (patch/image,
# window/grid, narrow global vs wide local) at 128x128.
DESK = NetworkConfig()

# Full-scale recipe: 2944x1920 inputs, 46x30 saliency grid, 256px
# patches, K=6 ROIs, L=512/M=128 attention dims. Stage layout (five
# stages of two blocks, quarter-width channels, one extra block) is the
# published narrow-ResNet design; block counts per stage are the
# canonical reading of that layout.
PAPER_SCALE = NetworkConfig(
    input_height=2944,
    input_width=1920,
    downsample_factor=64,
    first_conv=(7, 2, 3),
    stage_strides=(2, 2, 2, 2, 2),
    block_channels=(16, 32, 64, 128, 256),
    blocks_per_stage=(2, 2, 2, 2, 2),
    local_variant="tiny-18-like",
    local_channels=(64, 128, 256, 512),
    local_first_conv=(7, 2, 3),
    patch_size=256,
    num_patches=6,
    embed_dim=512,
    attention_dim=128,
)

PRESETS = {"desk": DESK, "paper-scale": PAPER_SCALE}


# -- layers ------------------------------------------------------------------


class Conv2d:
    def __init__(self, cin: int, cout: int, ksize: int, stride: int, padding: int, rng, dtype):
        std = math.sqrt(2.0 / (cin * ksize * ksize))  # He-normal
        self.weight = Tensor(rng.normal(0.0, std, (cout, cin, ksize, ksize)), requires_grad=True, dtype=dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight

    def named_buffers(self, prefix: str):
        return iter(())


class BatchNorm2d:
    def __init__(self, channels: int, dtype, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=training, momentum=self.momentum, eps=self.eps,
        )

    def named_parameters(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix: str):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


class Linear:
    def __init__(self, fin: int, fout: int, rng, dtype, bias: bool = True):
        std = math.sqrt(2.0 / fin)
        self.weight = Tensor(rng.normal(0.0, std, (fin, fout)), requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(fout), requires_grad=True, dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_buffers(self, prefix: str):
        return iter(())


class BasicBlock:
    """Pre-activation residual block: BN-ReLU-conv3x3 twice, identity or
    1x1-projected shortcut taken from the pre-activated input."""

    def __init__(self, cin: int, cout: int, stride: int, rng, dtype):
        self.bn1 = BatchNorm2d(cin, dtype)
        self.conv1 = Conv2d(cin, cout, 3, stride, 1, rng, dtype)
        self.bn2 = BatchNorm2d(cout, dtype)
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, rng, dtype)
        self.proj = Conv2d(cin, cout, 1, stride, 0, rng, dtype) if (stride != 1 or cin != cout) else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        o = T.relu(self.bn1(x, training))
        shortcut = self.proj(o) if self.proj is not None else x
        h = self.conv1(o)
        h = self.conv2(T.relu(self.bn2(h, training)))
        return T.add(h, shortcut)

    def named_parameters(self, prefix: str):
        for sub, name in ((self.bn1, "bn1"), (self.conv1, "conv1"), (self.bn2, "bn2"), (self.conv2, "conv2")):
            yield from sub.named_parameters(f"{prefix}.{name}")
        if self.proj is not None:
            yield from self.proj.named_parameters(f"{prefix}.proj")

    def named_buffers(self, prefix: str):
        yield from self.bn1.named_buffers(f"{prefix}.bn1")
        yield from self.bn2.named_buffers(f"{prefix}.bn2")


class BottleneckBlock:
    """Pre-activation bottleneck: 1x1 reduce, 3x3, 1x1 expand (x4)."""

    def __init__(self, cin: int, planes: int, stride: int, rng, dtype):
        cout = planes * BOTTLENECK_EXPANSION
        self.bn1 = BatchNorm2d(cin, dtype)
        self.conv1 = Conv2d(cin, planes, 1, 1, 0, rng, dtype)
        self.bn2 = BatchNorm2d(planes, dtype)
        self.conv2 = Conv2d(planes, planes, 3, stride, 1, rng, dtype)
        self.bn3 = BatchNorm2d(planes, dtype)
        self.conv3 = Conv2d(planes, cout, 1, 1, 0, rng, dtype)
        self.proj = Conv2d(cin, cout, 1, stride, 0, rng, dtype) if (stride != 1 or cin != cout) else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        o = T.relu(self.bn1(x, training))
        shortcut = self.proj(o) if self.proj is not None else x
        h = self.conv1(o)
        h = self.conv2(T.relu(self.bn2(h, training)))
        h = self.conv3(T.relu(self.bn3(h, training)))
        return T.add(h, shortcut)

    def named_parameters(self, prefix: str):
        subs = ((self.bn1, "bn1"), (self.conv1, "conv1"), (self.bn2, "bn2"),
                (self.conv2, "conv2"), (self.bn3, "bn3"), (self.conv3, "conv3"))
        for sub, name in subs:
            yield from sub.named_parameters(f"{prefix}.{name}")
        if self.proj is not None:
            yield from self.proj.named_parameters(f"{prefix}.proj")

    def named_buffers(self, prefix: str):
        for sub, name in ((self.bn1, "bn1"), (self.bn2, "bn2"), (self.bn3, "bn3")):
            yield from sub.named_buffers(f"{prefix}.{name}")


class _ResidualStack:
    def __init__(self, cin, stage_channels, blocks_per_stage, stage_strides, rng, dtype, bottleneck=False):
        self.stages = []
        c = cin
        for channels, blocks, stride in zip(stage_channels, blocks_per_stage, stage_strides):
            stage = []
            for b in range(blocks):
                if bottleneck:
                    block = BottleneckBlock(c, channels, stride if b == 0 else 1, rng, dtype)
                    c = channels * BOTTLENECK_EXPANSION
                else:
                    block = BasicBlock(c, channels, stride if b == 0 else 1, rng, dtype)
                    c = channels
                stage.append(block)
            self.stages.append(stage)
        self.out_channels = c

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for stage in self.stages:
            for block in stage:
                x = block(x, training)
        return x

    def named_parameters(self, prefix: str):
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                yield from block.named_parameters(f"{prefix}.stage{si}.block{bi}")

    def named_buffers(self, prefix: str):
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                yield from block.named_buffers(f"{prefix}.stage{si}.block{bi}")


class GlobalNetwork:
    """Narrow residual feature extractor for whole images.

    Maps [N,1,H,W] to the feature map [N, C_g, H/D, W/D].
    """

    def __init__(self, cfg: NetworkConfig, rng, dtype=np.float32):
        k, s, p = cfg.first_conv
        self.cfg = cfg
        self.conv1 = Conv2d(1, cfg.block_channels[0], k, s, p, rng, dtype)
        self.stack = _ResidualStack(
            cfg.block_channels[0], cfg.block_channels, cfg.blocks_per_stage, cfg.stage_strides, rng, dtype
        )
        self.final_bn = BatchNorm2d(self.stack.out_channels, dtype)
        self.out_channels = self.stack.out_channels

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.cfg.input_height or x.shape[3] != self.cfg.input_width:
            raise ShapeError(
                f"global network expects [N,1,{self.cfg.input_height},{self.cfg.input_width}], got {x.shape}"
            )
        h = self.conv1(x)
        h = self.stack(h, training)
        return T.relu(self.final_bn(h, training))

    def named_parameters(self, prefix: str = "global"):
        yield from self.conv1.named_parameters(f"{prefix}.conv1")
        yield from self.stack.named_parameters(prefix)
        yield from self.final_bn.named_parameters(f"{prefix}.final_bn")

    def named_buffers(self, prefix: str = "global"):
        yield from self.stack.named_buffers(prefix)
        yield from self.final_bn.named_buffers(f"{prefix}.final_bn")


class LocalNetwork:
    """Wider residual embedder for ROI patches.

    Maps [N*K, 1, patch, patch] to embeddings [N*K, L]: residual stack,
    global average pooling, then a linear projection to L.
    """

    LOCAL_STAGE_STRIDES = (2, 2, 2, 2)

    def __init__(self, cfg: NetworkConfig, rng, dtype=np.float32):
        blocks, bottleneck = LOCAL_VARIANTS[cfg.local_variant]
        k, s, p = cfg.local_first_conv
        self.cfg = cfg
        self.conv1 = Conv2d(1, cfg.local_channels[0], k, s, p, rng, dtype)
        self.stack = _ResidualStack(
            cfg.local_channels[0], cfg.local_channels, blocks, self.LOCAL_STAGE_STRIDES, rng, dtype,
            bottleneck=bottleneck,
        )
        self.final_bn = BatchNorm2d(self.stack.out_channels, dtype)
        self.project = Linear(self.stack.out_channels, cfg.embed_dim, rng, dtype)

    def __call__(self, patches: Tensor, training: bool) -> Tensor:
        ps = self.cfg.patch_size
        if patches.ndim != 4 or patches.shape[1] != 1 or patches.shape[2] != ps or patches.shape[3] != ps:
            raise ShapeError(f"local network expects [N*K,1,{ps},{ps}], got {patches.shape}")
        h = self.conv1(patches)
        h = self.stack(h, training)
        h = T.relu(self.final_bn(h, training))
        return self.project(T.global_avg_pool(h))

    def named_parameters(self, prefix: str = "local"):
        yield from self.conv1.named_parameters(f"{prefix}.conv1")
        yield from self.stack.named_parameters(prefix)
        yield from self.final_bn.named_parameters(f"{prefix}.final_bn")
        yield from self.project.named_parameters(f"{prefix}.project")

    def named_buffers(self, prefix: str = "local"):
        yield from self.stack.named_buffers(prefix)
        yield from self.final_bn.named_buffers(f"{prefix}.final_bn")


def parameter_count(module, prefix: str = "net") -> int:
    return sum(t.size for _, t in module.named_parameters(prefix))
