"""Gated attention over patch embeddings and the local prediction head.

Per patch k, a tanh branch and a sigmoid gate (both L -> M projections)
are multiplied elementwise and scored by an M-vector; the softmax over
the K scores gives the attention weights. The weighted sum of
embeddings is the bag representation fed to the local head.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class GatedAttention:
    """Learnable parameters: projections V, U in [L,M], score vector in [M]."""

    def __init__(self, embed_dim: int, attention_dim: int, rng, dtype=np.float32):
        std = math.sqrt(1.0 / embed_dim)
        self.V = Tensor(rng.normal(0.0, std, (embed_dim, attention_dim)), requires_grad=True, dtype=dtype)
        self.U = Tensor(rng.normal(0.0, std, (embed_dim, attention_dim)), requires_grad=True, dtype=dtype)
        self.score = Tensor(rng.normal(0.0, math.sqrt(1.0 / attention_dim), (attention_dim, 1)),
                            requires_grad=True, dtype=dtype)

    def __call__(self, embeddings: Tensor) -> Tensor:
        return gated_attention(embeddings, self.V, self.U, self.score)

    def named_parameters(self, prefix: str = "attention"):
        yield f"{prefix}.V", self.V
        yield f"{prefix}.U", self.U
        yield f"{prefix}.score", self.score

    def named_buffers(self, prefix: str = "attention"):
        return iter(())


def gated_attention(embeddings: Tensor, V: Tensor, U: Tensor, score: Tensor) -> Tensor:
    """Attention weights over patches.

    [K,L] -> [K], or batched [N,K,L] -> [N,K]. Weights are a softmax
    (max-subtracted, mathematically identical to the plain ratio) of
    score . (tanh(e V) * sigm(e U)) per patch.
    """
    batched = embeddings.ndim == 3
    if not batched and embeddings.ndim != 2:
        raise ShapeError(f"gated_attention expects [K,L] or [N,K,L], got {embeddings.shape}")
    shape = embeddings.shape
    flat = T.reshape(embeddings, (-1, shape[-1]))
    gate = T.mul(T.tanh(T.linear(flat, V)), T.sigmoid(T.linear(flat, U)))
    logits = T.linear(gate, score)  # [N*K, 1]
    logits = T.reshape(logits, shape[:-1])
    return T.softmax(logits, axis=-1)


def attention_pool(embeddings: Tensor, alpha: Tensor) -> Tensor:
    """Convex combination of embeddings, summed in ascending patch order.

    ([K,L], [K]) -> [L], or ([N,K,L], [N,K]) -> [N,L].
    """
    if embeddings.ndim == 2:
        if alpha.shape != (embeddings.shape[0],):
            raise ShapeError(f"alpha shape {alpha.shape} does not match {embeddings.shape[0]} patches")
        weighted = T.mul(T.reshape(alpha, (-1, 1)), embeddings)
        return T.sum_axis(weighted, axis=0)
    if embeddings.ndim == 3:
        if alpha.shape != embeddings.shape[:2]:
            raise ShapeError(f"alpha shape {alpha.shape} does not match embeddings {embeddings.shape}")
        weighted = T.mul(T.reshape(alpha, alpha.shape + (1,)), embeddings)
        return T.sum_axis(weighted, axis=1)
    raise ShapeError(f"attention_pool expects [K,L] or [N,K,L], got {embeddings.shape}")


def local_head(z: Tensor, w_local: Tensor) -> Tensor:
    """Two-class sigmoid head over the bag representation (no bias term).

    [L] or [N,L] -> [2] or [N,2]."""
    single = z.ndim == 1
    z2 = T.reshape(z, (1, -1)) if single else z
    out = T.sigmoid(T.linear(z2, w_local))
    return T.reshape(out, (2,)) if single else out
