"""Dense NCHW numeric kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects. Training and inference run in
float32; every kernel preserves the dtype of its inputs, so feeding float64
arrays gives the high-precision mode used by the gradient checks.

Each differentiable op comes as a ``*_forward`` function returning
``(output, cache)`` and a ``*_backward`` function taking that cache and the
upstream gradient. The plain-named wrappers (``conv2d``, ``dense``, ...)
return the output only. No kernel mutates its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DTYPE = np.float32
BN_MOMENTUM = 0.99
BN_EPSILON = 1e-3


class ShapeError(ValueError):
    """Raised when operand extents disagree; names the offending axis."""

    def __init__(self, op: str, axis: str, expected, got):
        self.op = op
        self.axis = axis
        super().__init__(f"{op}: {axis} mismatch (expected {expected}, got {got})")


class MissingCacheError(RuntimeError):
    pass


@dataclass
class LayerParams:
    """Parameter tensors of one layer.

    ``trainable`` maps tensor name to a flag; batch-norm running statistics
    are stored but never trained.
    """

    weights: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    bn_gamma: Optional[np.ndarray] = None
    bn_beta: Optional[np.ndarray] = None
    bn_mean: Optional[np.ndarray] = None
    bn_var: Optional[np.ndarray] = None
    trainable: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights is not None and self.bias is not None:
            # conv kernels are (Cout, ...); dense weights are (N, M)
            cout = self.weights.shape[1] if self.weights.ndim == 2 else self.weights.shape[0]
            if self.bias.shape != (cout,):
                raise ShapeError("LayerParams", "bias length", (cout,), self.bias.shape)
        bn = [t for t in (self.bn_gamma, self.bn_beta, self.bn_mean, self.bn_var) if t is not None]
        if bn:
            n = bn[0].shape[0]
            for t in bn:
                if t.shape != (n,):
                    raise ShapeError("LayerParams", "batch-norm channel count", (n,), t.shape)
            if self.bn_var is not None and np.any(self.bn_var < 0):
                raise ValueError("LayerParams: bn_var must be non-negative")
        for name in self.tensor_names():
            self.trainable.setdefault(name, name not in ("bn_mean", "bn_var"))

    def tensor_names(self) -> list[str]:
        names = ("weights", "bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var")
        return [n for n in names if getattr(self, n) is not None]

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.tensor_names()}


@dataclass
class Cache:
    kind: str
    out_shape: tuple
    data: dict


# ---------------------------------------------------------------------------
# shape helpers
# ---------------------------------------------------------------------------

def _check_4d(op, x):
    if x.ndim != 4:
        raise ShapeError(op, "rank", 4, x.ndim)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding (before, after) giving ceil(size / stride) outputs."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        before, after = same_padding(size, kernel, stride)
        pad = before + after
    elif padding == "valid":
        pad = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    out = (size + pad - kernel) // stride + 1
    if out < 1:
        raise ShapeError("conv", "spatial extent", f">= {kernel}", size)
    return out


def _pad(x, kh, kw, stride, padding):
    if padding == "valid":
        return x, (0, 0, 0, 0)
    t, b = same_padding(x.shape[2], kh, stride)
    l, r = same_padding(x.shape[3], kw, stride)
    if t == b == l == r == 0:
        return x, (0, 0, 0, 0)
    return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r))), (t, b, l, r)


def _unpad(dxp, pads):
    t, b, l, r = pads
    h, w = dxp.shape[2], dxp.shape[3]
    return dxp[:, :, t:h - b, l:w - r]


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_forward(x, weights, bias=None, stride=1, padding="same"):
    _check_4d("conv2d", x)
    if weights.ndim != 4:
        raise ShapeError("conv2d", "weights rank", 4, weights.ndim)
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    B, C, H, W = x.shape
    cout, cin, kh, kw = weights.shape
    if cin != C:
        raise ShapeError("conv2d", "input channels", cin, C)
    if bias is not None and bias.shape != (cout,):
        raise ShapeError("conv2d", "bias length", (cout,), bias.shape)
    ho = conv_output_size(H, kh, stride, padding)
    wo = conv_output_size(W, kw, stride, padding)
    xp, pads = _pad(x, kh, kw, stride, padding)

    # cols is (B, C*kh*kw, Ho*Wo) so one batched matmul yields NCHW directly
    if kh == kw == 1 and stride == 1:
        cols = x.reshape(B, C, H * W)
    else:
        cols = np.empty((B, C, kh, kw, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(B, C * kh * kw, ho * wo)
    out = np.matmul(weights.reshape(cout, -1), cols)
    if bias is not None:
        out += bias[:, None]
    out = out.reshape(B, cout, ho, wo)
    cache = Cache("conv", out.shape, dict(
        cols=cols, weights=weights, has_bias=bias is not None,
        xp_shape=xp.shape, pads=pads, stride=stride))
    return out, cache


def conv2d_weight_grads(cache, grad):
    d = cache.data
    weights = d["weights"]
    B, cout = grad.shape[:2]
    g = grad.reshape(B, cout, -1)
    cols = d["cols"]
    dw = np.zeros((cout, cols.shape[1]), dtype=grad.dtype)
    for b in range(B):
        dw += g[b] @ cols[b].T
    grads = {"weights": dw.reshape(weights.shape)}
    if d["has_bias"]:
        grads["bias"] = g.sum(axis=(0, 2))
    return grads


def conv2d_backward(cache, grad):
    d = cache.data
    weights, stride = d["weights"], d["stride"]
    cout, cin, kh, kw = weights.shape
    B, _, ho, wo = grad.shape
    grads = conv2d_weight_grads(cache, grad)
    dcols = np.matmul(weights.reshape(cout, -1).T, grad.reshape(B, cout, -1))
    if kh == kw == 1 and stride == 1:
        return dcols.reshape(B, cin, ho, wo), grads
    dcols = dcols.reshape(B, cin, kh, kw, ho, wo)
    dxp = np.zeros(d["xp_shape"], dtype=grad.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    return np.ascontiguousarray(_unpad(dxp, d["pads"])), grads


def conv2d(x, weights, bias=None, stride=1, padding="same"):
    """Cross-correlation of an NCHW batch with (Cout, Cin, kH, kW) kernels."""
    return conv2d_forward(x, weights, bias, stride, padding)[0]


def depthwise_conv2d_forward(x, weights, bias=None, stride=1, padding="same"):
    _check_4d("depthwise_conv2d", x)
    B, C, H, W = x.shape
    if weights.ndim != 4 or weights.shape[1] != 1:
        raise ShapeError("depthwise_conv2d", "weights layout", "(C, 1, kH, kW)", weights.shape)
    if weights.shape[0] != C:
        raise ShapeError("depthwise_conv2d", "channels", weights.shape[0], C)
    kh, kw = weights.shape[2:]
    ho = conv_output_size(H, kh, stride, padding)
    wo = conv_output_size(W, kw, stride, padding)
    xp, pads = _pad(x, kh, kw, stride, padding)
    out = np.zeros((B, C, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            out += win * weights[:, 0, i, j][None, :, None, None]
    if bias is not None:
        out += bias[None, :, None, None]
    cache = Cache("depthwise_conv", out.shape, dict(
        xp=xp, weights=weights, has_bias=bias is not None, pads=pads, stride=stride))
    return out, cache


def depthwise_conv2d_backward(cache, grad):
    d = cache.data
    xp, weights, stride = d["xp"], d["weights"], d["stride"]
    kh, kw = weights.shape[2:]
    ho, wo = grad.shape[2:]
    dw = np.empty_like(weights)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
            dw[:, 0, i, j] = np.einsum("bchw,bchw->c", xp[sl], grad)
            dxp[sl] += grad * weights[:, 0, i, j][None, :, None, None]
    grads = {"weights": dw}
    if d["has_bias"]:
        grads["bias"] = grad.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(_unpad(dxp, d["pads"])), grads


def depthwise_conv2d(x, weights, bias=None, stride=1, padding="same"):
    """Per-channel spatial convolution; weights are (C, 1, kH, kW)."""
    return depthwise_conv2d_forward(x, weights, bias, stride, padding)[0]


# ---------------------------------------------------------------------------
# dense, activations, pooling
# ---------------------------------------------------------------------------

def dense_forward(x, weights, bias=None):
    if x.ndim != 2:
        raise ShapeError("dense", "input rank", 2, x.ndim)
    if weights.ndim != 2 or weights.shape[0] != x.shape[1]:
        raise ShapeError("dense", "inner dimension", x.shape[1], weights.shape[0])
    out = x @ weights
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise ShapeError("dense", "bias length", (weights.shape[1],), bias.shape)
        out = out + bias
    return out, Cache("dense", out.shape, dict(x=x, weights=weights, has_bias=bias is not None))


def dense_backward(cache, grad):
    d = cache.data
    grads = {"weights": d["x"].T @ grad}
    if d["has_bias"]:
        grads["bias"] = grad.sum(axis=0)
    return grad @ d["weights"].T, grads


def dense(x, weights, bias=None):
    return dense_forward(x, weights, bias)[0]


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, Cache("relu", out.shape, dict(mask=x > 0))


def relu_backward(cache, grad):
    return grad * cache.data["mask"], {}


def relu(x):
    return np.maximum(x, 0)


def relu6_forward(x):
    out = np.clip(x, 0, 6)
    return out, Cache("relu6", out.shape, dict(mask=(x > 0) & (x < 6)))


relu6_backward = relu_backward


def relu6(x):
    return np.clip(x, 0, 6)


def max_pool2d_forward(x, window=2, stride=2):
    _check_4d("max_pool2d", x)
    if window != 2 or stride != 2:
        raise ValueError("max_pool2d: only 2x2 windows with stride 2 are supported")
    B, C, H, W = x.shape
    ho, wo = H // 2, W // 2
    if ho < 1 or wo < 1:
        raise ShapeError("max_pool2d", "spatial extent", ">= 2", (H, W))
    quads = [x[:, :, a:2 * ho:2, b:2 * wo:2] for a in (0, 1) for b in (0, 1)]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    # gradient goes to the first maximal element of each window (row-major)
    taken = np.zeros(out.shape, dtype=bool)
    masks = []
    for q in quads:
        m = (q == out) & ~taken
        taken |= m
        masks.append(m)
    return out, Cache("max_pool", out.shape, dict(masks=masks, x_shape=x.shape))


def max_pool2d_backward(cache, grad):
    d = cache.data
    ho, wo = grad.shape[2:]
    dx = np.zeros(d["x_shape"], dtype=grad.dtype)
    for (a, b), m in zip(((0, 0), (0, 1), (1, 0), (1, 1)), d["masks"]):
        dx[:, :, a:2 * ho:2, b:2 * wo:2] = grad * m
    return dx, {}


def max_pool2d(x, window=2, stride=2):
    return max_pool2d_forward(x, window, stride)[0]


def global_average_pool_forward(x):
    _check_4d("global_average_pool", x)
    out = x.mean(axis=(2, 3))
    return out, Cache("global_avg_pool", out.shape, dict(x_shape=x.shape))


def global_average_pool_backward(cache, grad):
    B, C, H, W = cache.data["x_shape"]
    dx = np.broadcast_to(grad[:, :, None, None] / (H * W), (B, C, H, W))
    return np.array(dx), {}


def global_average_pool(x):
    return global_average_pool_forward(x)[0]


def flatten_forward(x):
    out = x.reshape(x.shape[0], -1)
    return out, Cache("flatten", out.shape, dict(x_shape=x.shape))


def flatten_backward(cache, grad):
    return grad.reshape(cache.data["x_shape"]), {}


def dropout_forward(x, rate, rng=None, training=False):
    """Inverted dropout; identity outside training."""
    if not training or rate == 0:
        return x, Cache("dropout", x.shape, dict(mask=None))
    if rng is None:
        raise ValueError("dropout: training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, Cache("dropout", x.shape, dict(mask=keep))


def dropout_backward(cache, grad):
    mask = cache.data["mask"]
    return (grad if mask is None else grad * mask), {}


# ---------------------------------------------------------------------------
# batch normalisation
# ---------------------------------------------------------------------------

def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (None, slice(None), None, None)
    if x.ndim == 2:
        return (0,), (None, slice(None))
    raise ShapeError("batch_norm", "rank", "2 or 4", x.ndim)


def batch_norm_forward(x, gamma, beta, mean, var, training=False,
                       momentum=BN_MOMENTUM, epsilon=BN_EPSILON):
    """Returns ``(out, cache, new_mean, new_var)``.

    Running statistics are returned, not written in place; in inference mode
    they come back unchanged.
    """
    if epsilon <= 0:
        raise ValueError("batch_norm: epsilon must be > 0")
    axes, bc = _bn_axes(x)
    C = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if t.shape != (C,):
            raise ShapeError("batch_norm", f"{name} length", (C,), t.shape)
    if training:
        mu = x.mean(axis=axes)
        v = x.var(axis=axes)
        new_mean = momentum * mean + (1 - momentum) * mu
        new_var = momentum * var + (1 - momentum) * v
    else:
        mu, v = mean, var
        new_mean, new_var = mean, var
    inv_std = 1.0 / np.sqrt(v + epsilon)
    xhat = (x - mu[bc]) * inv_std[bc]
    out = gamma[bc] * xhat + beta[bc]
    cache = Cache("batch_norm", out.shape, dict(
        xhat=xhat, gamma=gamma, inv_std=inv_std, training=training, axes=axes, bc=bc))
    return out, cache, new_mean.astype(mean.dtype), new_var.astype(var.dtype)


def batch_norm_backward(cache, grad):
    d = cache.data
    axes, bc = d["axes"], d["bc"]
    xhat, gamma, inv_std = d["xhat"], d["gamma"], d["inv_std"]
    grads = {"bn_gamma": (grad * xhat).sum(axis=axes), "bn_beta": grad.sum(axis=axes)}
    dxhat = grad * gamma[bc]
    if not d["training"]:
        return dxhat * inv_std[bc], grads
    m = grad.size / grad.shape[1]
    dx = (inv_std[bc] / m) * (
        m * dxhat - dxhat.sum(axis=axes)[bc] - xhat * (dxhat * xhat).sum(axis=axes)[bc])
    return dx, grads


def batch_norm(x, params: LayerParams, mode="infer", momentum=BN_MOMENTUM, epsilon=BN_EPSILON):
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm: unknown mode {mode!r}")
    out, _, _, _ = batch_norm_forward(
        x, params.bn_gamma, params.bn_beta, params.bn_mean, params.bn_var,
        training=mode == "train", momentum=momentum, epsilon=epsilon)
    return out


def add_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError("add_residual", "operand shape", a.shape, b.shape)
    out = a + b
    return out, Cache("add_residual", out.shape, {})


# ---------------------------------------------------------------------------
# dispatch and gradient oracle
# ---------------------------------------------------------------------------

_BACKWARD = {
    "conv": conv2d_backward,
    "pointwise_conv": conv2d_backward,
    "depthwise_conv": depthwise_conv2d_backward,
    "dense": dense_backward,
    "relu": relu_backward,
    "relu6": relu6_backward,
    "max_pool": max_pool2d_backward,
    "global_avg_pool": global_average_pool_backward,
    "flatten": flatten_backward,
    "dropout": dropout_backward,
    "batch_norm": batch_norm_backward,
}


def backward(cache: Optional[Cache], grad: np.ndarray):
    """Input gradient and parameter gradients for one cached forward call."""
    if cache is None:
        raise MissingCacheError("backward called without a cached forward state")
    if grad.shape != tuple(cache.out_shape):
        raise ShapeError(f"{cache.kind} backward", "upstream gradient shape", tuple(cache.out_shape), grad.shape)
    return _BACKWARD[cache.kind](cache, grad)


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one element at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad
