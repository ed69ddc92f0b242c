"""Dense float tensors with reverse-mode automatic differentiation.

Implements exactly the operations the two-stage classifier graph needs:
2-d convolution, batch normalization, affine maps, elementwise
activations and arithmetic, global max/average pooling, top-fraction
mean pooling, softmax, concatenation and reductions.

The tape is define-by-run: every op records its parent tensors and a
backward rule on the output, and ``Tensor.backward`` replays the
recorded graph once in reverse topological order. Leaves created with
``requires_grad=True`` accumulate gradients in ``.grad``. Precision is
configurable per tensor (float32 for training, float64 for gradient
checks); ops require their tensor inputs to share a dtype.
"""

from __future__ import annotations

import math
import os
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# When enabled, every forward op asserts its output is finite.
_debug_checks = os.environ.get("GMIC_DEBUG", "") not in ("", "0")

_grad_enabled = True


def set_debug_checks(enabled: bool) -> None:
    global _debug_checks
    _debug_checks = bool(enabled)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
        # ascontiguousarray would promote 0-d scalars to 1-d
        self.data = np.ascontiguousarray(arr, dtype=dtype) if arr.ndim else np.asarray(arr, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autograd ------------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad leaf.

        Only valid on scalar tensors. The recorded graph is consumed:
        a second backward on the same root raises.
        """
        if self.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed by a previous backward call")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
            node._parents = ()
            node._backward = None
        self._consumed = True

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / float(other))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result, recording the tape node when gradients are needed."""
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericError("non-finite values produced by a forward op")
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, dtype=data.dtype)
    if requires:
        out._parents = parents
        out._backward = backward
    return out


def _const(value, dtype) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    return arr


def _check_dtypes(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed tensor dtypes {sorted(map(str, dtypes))}; cast explicitly")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_dtypes(a, b)
        data = a.data + b.data
        a_shape, b_shape = a.shape, b.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return _make(data, (a, b), backward)
    c = _const(b, a.data.dtype)
    data = a.data + c
    a_shape = a.shape

    def backward(g):
        return (_unbroadcast(g, a_shape),)

    return _make(data, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_dtypes(a, b)
        data = a.data * b.data
        a_shape, b_shape = a.shape, b.shape
        ad, bd = a.data, b.data

        def backward(g):
            return _unbroadcast(g * bd, a_shape), _unbroadcast(g * ad, b_shape)

        return _make(data, (a, b), backward)
    c = _const(b, a.data.dtype)
    data = a.data * c
    a_shape = a.shape

    def backward(g):
        return (_unbroadcast(g * c, a_shape),)

    return _make(data, (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * mask,)

    return _make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _make(data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward)


# -- activations -----------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _make(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    t = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation kind {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    return fn(a)


# -- reductions / reshaping -------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())
    a_shape = a.shape

    def backward(g):
        return (np.broadcast_to(g, a_shape).copy(),)

    return _make(data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    data = np.asarray(a.data.mean())
    a_shape = a.shape

    def backward(g):
        return (np.broadcast_to(g / n, a_shape).copy(),)

    return _make(data, (a,), backward)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    a_shape = a.shape

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a_shape).copy(),)

    return _make(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    a_shape = a.shape

    def backward(g):
        return (g.reshape(a_shape),)

    return _make(data, (a,), backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    _check_dtypes(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, computed with max-subtraction for stability."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), backward)


# -- affine map --------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map [N,F] @ [F,G] (+ [G]) -> [N,G]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear expects [N,F] @ [F,G]; got {x.shape} and {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match output dim {weight.shape[1]}")
    parents = (x, weight) if bias is None else (x, weight, bias)
    _check_dtypes(*parents)
    data = x.data @ weight.data
    if bias is not None:
        data = data + bias.data
    xd, wd = x.data, weight.data

    def backward(g):
        gx = g @ wd.T
        gw = xd.T @ g
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _make(data, parents, backward)


# -- convolution --------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution (cross-correlation), NCHW input and OIKK kernel.

    Lowered to one batched matmul over im2col columns; the column layout
    [N, C*kh*kw, OH*OW] keeps both the forward and both backward
    contractions free of large transposes.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIKK weight; got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d kernel {weight.shape} larger than padded input {x.shape} (padding={padding})")
    _check_dtypes(x, weight)
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow).reshape(n, c * kh * kw, oh * ow)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(w2, cols).reshape(n, o, oh, ow)
    wd = weight.data
    need_x = x.requires_grad
    need_w = weight.requires_grad

    def backward(g):
        g2 = g.reshape(n, o, oh * ow)
        gw = None
        if need_w:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        if not need_x:
            return None, gw
        gcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, oh, ow)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, i, j]
        if padding:
            gxp = gxp[:, :, padding : padding + h, padding : padding + w]
        return gxp, gw

    return _make(out, (x, weight), backward)


# -- batch normalization ---------------------------------------------------------------


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over an NCHW tensor.

    Train mode normalizes with batch statistics and updates the running
    stats in place (momentum 0.1, unbiased variance, the usual
    convention); eval mode normalizes with the running stats.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d parameter shapes {gamma.shape}/{beta.shape} do not match {c} channels")
    _check_dtypes(x, gamma, beta)
    gshape = (1, c, 1, 1)
    if training:
        if n < 2:
            raise ShapeError("batchnorm2d in train mode requires batch size >= 2")
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        centered = x.data - mean.reshape(gshape)
        var = np.einsum("nchw,nchw->c", centered, centered) / m
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std.reshape(gshape)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
        data = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)
        gd = gamma.data

        def backward(g):
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            dbeta = g.sum(axis=(0, 2, 3))
            dxhat = g * gd.reshape(gshape)
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = (inv_std.reshape(gshape) / m) * (m * dxhat - s1 - xhat * s2)
            return dx, dgamma, dbeta

        return _make(data, (x, gamma, beta), backward)

    inv_std = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean.reshape(gshape)) * inv_std.reshape(gshape)
    xhat = xhat.astype(x.data.dtype, copy=False)
    data = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)
    gd = gamma.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dx = g * (gd * inv_std.astype(g.dtype)).reshape(gshape)
        return dx, dgamma, dbeta

    return _make(data, (x, gamma, beta), backward)


# -- pooling ------------------------------------------------------------------------------


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial max, [N,C,H,W] -> [N,C].

    Backward routes the gradient to the first maximal element in
    row-major order (deterministic tie rule).
    """
    if x.ndim != 4:
        raise ShapeError(f"global_max_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g[..., None], axis=-1)
        return (gf.reshape(x.shape),)

    return _make(data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, [N,C,H,W] -> [N,C]."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[..., None, None], x.shape).copy(),)

    return _make(data, (x,), backward)


def top_fraction_count(t: float, cells: int) -> int:
    """Number of pooled cells k = ceil(t * cells), guarded against float
    round-up at the exact GMP limit t = 1/cells, clamped to [1, cells]."""
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"pool fraction must lie in (0, 1], got {t}")
    k = int(math.ceil(t * cells * (1.0 - 1e-12)))
    return min(max(k, 1), cells)


def topk_mean_pool(a: Tensor, t: float) -> Tensor:
    """Mean of the top ceil(t*h*w) entries of the trailing two axes.

    [h,w] -> scalar, [N,C,h,w] -> [N,C]. Ties at the k-th rank are
    broken in row-major order; backward distributes 1/k to exactly the
    selected entries. t = 1/(h*w) reduces to global max pooling and
    t = 1 to global average pooling, exactly.
    """
    if a.ndim < 2:
        raise ShapeError(f"topk_mean_pool expects at least 2 dims, got {a.shape}")
    h, w = a.shape[-2:]
    cells = h * w
    k = top_fraction_count(t, cells)
    lead = a.shape[:-2]
    flat = a.data.reshape(lead + (cells,))
    if k == cells:
        data = flat.mean(axis=-1)

        def backward(g):
            gf = np.broadcast_to((g / cells)[..., None], flat.shape).copy()
            return (gf.reshape(a.shape),)

        return _make(np.asarray(data), (a,), backward)

    order = np.argsort(-flat, axis=-1, kind="stable")[..., :k]
    top = np.take_along_axis(flat, order, axis=-1)
    data = top.mean(axis=-1) if k > 1 else top[..., 0]

    def backward(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, order, np.broadcast_to((g / k)[..., None], order.shape), axis=-1)
        return (gf.reshape(a.shape),)

    return _make(np.asarray(data), (a,), backward)


# -- gradient checking ---------------------------------------------------------------------


def finite_difference_check(
    fn,
    tensors: list[Tensor],
    step: float = 1e-5,
    rel_floor: float = 1e-8,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max per-element relative error between analytic and central-difference
    gradients of the scalar ``fn(*tensors)``.

    Relative error is |a - n| / max(|a|, |n|, rel_floor). Tensors should be
    float64; the step is scaled by the element magnitude. ``sample`` limits
    the number of perturbed elements per tensor.
    """
    for tsr in tensors:
        tsr.grad = None
    loss = fn(*tensors)
    loss.backward()
    analytic = []
    for tsr in tensors:
        analytic.append(np.zeros_like(tsr.data) if tsr.grad is None else tsr.grad.copy())
        tsr.grad = None
    worst = 0.0
    for tsr, ana in zip(tensors, analytic):
        flat = tsr.data.reshape(-1)
        aflat = ana.reshape(-1)
        if sample is None or sample >= flat.size:
            indices = range(flat.size)
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = sorted(rng.choice(flat.size, size=sample, replace=False).tolist())
        for i in indices:
            orig = flat[i]
            h = step * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            with no_grad():
                fp = fn(*tensors).item()
            flat[i] = orig - h
            with no_grad():
                fm = fn(*tensors).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = float(aflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            worst = max(worst, err)
    return worst
