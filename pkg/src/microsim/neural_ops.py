"""Layer-level operators: convolution, normalizations, style ops, rational
activations, resizing, and spectral normalization.

Conventions used throughout:
  * images/features are ``[c, h, w]`` or batched ``[b, c, h, w]``;
  * convolutions are correlations (no kernel flip), zero padded so the
    output spatial size equals the input ("same"), odd kernel sizes only;
  * normalizations use population (1/N) statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    _make,
    absolute,
    add,
    as_tensor,
    broadcast_to,
    concat,
    div,
    mul,
    power,
    reshape,
    slice_tail,
    sqrt,
    sub,
    tmean,
    transpose,
    tsum,
)


# -- convolution ------------------------------------------------------------

def _corr2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded correlation, x [b,ci,h,w], w [co,ci,k,k] -> [b,co,h,w]."""
    k = w.shape[-1]
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # [b,ci,h,w,k,k]
    return np.einsum("bchwij,ocij->bohw", win, w, optimize=True)


def conv2d(x, kernel, bias=None) -> Tensor:
    """2d convolution layer core: per-channel kernels summed over input maps.

    ``x`` is [c_in,h,w] or [b,c_in,h,w]; ``kernel`` is [c_out,c_in,k,k] with k
    odd; ``bias`` (optional) is [c_out].  Output keeps the spatial size.
    First-order differentiable w.r.t. all three inputs.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects [b,c,h,w] and [co,ci,k,k], got {x.shape}, {kernel.shape}")
    co, ci, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd size, got {kernel.shape}")
    if x.shape[1] != ci:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, kernel expects {ci}"
        )
    b = as_tensor(bias) if bias is not None else None
    if b is not None and b.shape != (co,):
        raise ShapeError(f"conv2d bias must be [{co}], got {b.shape}")

    xd, wd = x.data, kernel.data
    out = _corr2d(xd, wd)
    if b is not None:
        out = out + b.data[None, :, None, None]

    p = (k - 1) // 2

    def vjp(g: Tensor):
        gd = g.data
        gx = gw = gb = None
        if x.requires_grad:
            w_flip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).copy()
            gx = Tensor(_corr2d(gd, w_flip))
        if kernel.requires_grad:
            xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
            win = sliding_window_view(xp, (k, k), axis=(2, 3))
            gw = Tensor(np.einsum("bchwij,bohw->ocij", win, gd, optimize=True))
        if b is not None and b.requires_grad:
            gb = Tensor(gd.sum(axis=(0, 2, 3)))
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, kernel) if b is None else (x, kernel, b)
    res = _make(out, parents, vjp, "conv2d")
    return reshape(res, res.shape[1:]) if squeeze else res


def equalized_scale(fan_in: int) -> float:
    """Runtime weight multiplier sqrt(2 / fan_in) for equalized layers."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return math.sqrt(2.0 / fan_in)


# -- normalizations ---------------------------------------------------------

@dataclass
class NormParams:
    """Learnable affine plus running statistics of a normalization layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray = None
    running_std: np.ndarray = None
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        c = self.gamma.size
        if self.running_mean is None:
            self.running_mean = np.zeros(c)
        if self.running_std is None:
            self.running_std = np.ones(c)

    @classmethod
    def identity(cls, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True),
            beta=Tensor(np.zeros(channels), requires_grad=True),
            momentum=momentum,
            epsilon=epsilon,
        )


def _affine(x_hat: Tensor, params: NormParams, ndim: int) -> Tensor:
    shape = (1, params.gamma.size) + (1,) * (ndim - 2)
    g = reshape(params.gamma, shape)
    b = reshape(params.beta, shape)
    return add(mul(x_hat, g), b)


def batch_norm(batch, params: NormParams, mode: str = "train") -> Tensor:
    """Per-channel standardization over the whole batch, then scale/shift.

    Train mode uses batch statistics and updates the running accumulators by
    exponential moving average; eval mode applies the tracked statistics.
    """
    x = as_tensor(batch)
    if x.ndim < 2:
        raise ShapeError(f"batch_norm expects [b,c,...], got {x.shape}")
    c = x.shape[1]
    if params.gamma.size != c:
        raise ShapeError(f"batch_norm params for {params.gamma.size} channels, input has {c}")
    axes = (0,) + tuple(range(2, x.ndim))
    eps = params.epsilon
    if mode == "train":
        if x.shape[0] < 2:
            raise ShapeError("batch_norm train mode needs batch size >= 2")
        mu = tmean(x, axis=axes, keepdims=True)
        var = tmean(mul(sub(x, mu), sub(x, mu)), axis=axes, keepdims=True)
        if eps == 0.0 and np.any(var.data == 0.0):
            raise DomainError("zero batch variance with epsilon=0")
        x_hat = div(sub(x, mu), sqrt(add(var, eps)))
        m = params.momentum
        params.running_mean = (1 - m) * params.running_mean + m * mu.data.reshape(-1)
        params.running_std = (1 - m) * params.running_std + m * np.sqrt(var.data.reshape(-1))
    elif mode == "eval":
        shape = (1, c) + (1,) * (x.ndim - 2)
        rm = Tensor(params.running_mean.reshape(shape))
        rs = Tensor(np.sqrt(params.running_std.reshape(shape) ** 2 + eps))
        x_hat = div(sub(x, rm), rs)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _affine(x_hat, params, x.ndim)


def instance_norm(x, params: NormParams) -> Tensor:
    """Standardization per (instance, channel) over the spatial axes."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"instance_norm expects [b,c,spatial...], got {x.shape}")
    c = x.shape[1]
    if params.gamma.size != c:
        raise ShapeError(f"instance_norm params for {params.gamma.size} channels, input has {c}")
    axes = tuple(range(2, x.ndim))
    eps = params.epsilon
    mu = tmean(x, axis=axes, keepdims=True)
    var = tmean(mul(sub(x, mu), sub(x, mu)), axis=axes, keepdims=True)
    if eps == 0.0 and np.any(var.data == 0.0):
        raise DomainError("zero instance variance with epsilon=0")
    x_hat = div(sub(x, mu), sqrt(add(var, eps)))
    return _affine(x_hat, params, x.ndim)


@dataclass
class StyleVector:
    """Per-channel scale and bias halves of a style mapping output."""

    y_s: Tensor
    y_b: Tensor


def adain(features, style: StyleVector, epsilon: float = 0.0) -> Tensor:
    """Adaptive instance normalization of [c,h,w] features.

    Each feature map is standardized separately (population statistics), then
    scaled by ``y_s`` and shifted by ``y_b``.
    """
    x = as_tensor(features)
    if x.ndim != 3:
        raise ShapeError(f"adain expects [c,h,w], got {x.shape}")
    c = x.shape[0]
    y_s, y_b = as_tensor(style.y_s), as_tensor(style.y_b)
    if y_s.size != c or y_b.size != c:
        raise ShapeError(f"style has {y_s.size}/{y_b.size} channels, features have {c}")
    mu = tmean(x, axis=(1, 2), keepdims=True)
    var = tmean(mul(sub(x, mu), sub(x, mu)), axis=(1, 2), keepdims=True)
    if epsilon == 0.0 and np.any(var.data == 0.0):
        raise DomainError("zero-variance feature map with epsilon=0")
    x_hat = div(sub(x, mu), sqrt(add(var, epsilon)))
    ys = reshape(y_s, (c, 1, 1))
    yb = reshape(y_b, (c, 1, 1))
    return add(mul(x_hat, ys), yb)


def weight_demodulate(weights, style_scales, epsilon: float = 1e-8) -> Tensor:
    """Style-modulate convolution weights, then renormalize per output channel.

    W'[o,i,k] = W[o,i,k] * s[i];  W''[o,i,k] = W' / sqrt(sum_{i,k} W'^2 + eps).
    """
    w = as_tensor(weights)
    s = as_tensor(style_scales)
    if w.ndim != 4:
        raise ShapeError(f"weight_demodulate expects [co,ci,k,k], got {w.shape}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if s.size != w.shape[1]:
        raise ShapeError(f"style_scales length {s.size} != c_in {w.shape[1]}")
    sm = reshape(s, (1, w.shape[1], 1, 1))
    wp = mul(w, sm)
    denom = sqrt(add(tsum(mul(wp, wp), axis=(1, 2, 3), keepdims=True), epsilon))
    return div(wp, denom)


def minibatch_stddev(batch) -> Tensor:
    """Append one constant channel holding the batch variation statistic.

    Per spatial location and channel the standard deviation across the batch
    axis is computed, all those values are averaged to one scalar, and the
    scalar is broadcast as an extra channel.  Original channels pass through
    unchanged.
    """
    x = as_tensor(batch)
    if x.ndim != 4:
        raise ShapeError(f"minibatch_stddev expects [b,c,h,w], got {x.shape}")
    b = x.shape[0]
    if b < 2:
        raise ShapeError("minibatch_stddev needs batch size >= 2")
    mu = tmean(x, axis=0, keepdims=True)
    var = tmean(mul(sub(x, mu), sub(x, mu)), axis=0, keepdims=True)
    s = tmean(sqrt(var)) if np.any(var.data > 0) else Tensor(0.0)
    chan = broadcast_to(reshape(s, (1, 1, 1, 1)) if s.ndim == 0 else s, (b, 1) + x.shape[2:])
    return concat([x, chan], axis=1)


# -- rational activation -----------------------------------------------------

@dataclass
class PauParams:
    """Trainable rational-activation coefficients.

    ``a`` has length m+1 (numerator, constant term first), ``b`` has length n
    (denominator, starting at the linear term).  The denominator is
    1 + |b_1 x + ... + b_n x^n| >= 1, so the activation has no poles.
    """

    a: Tensor
    b: Tensor

    def __post_init__(self):
        self.a = as_tensor(self.a)
        self.b = as_tensor(self.b)

    @property
    def m(self) -> int:
        return self.a.size - 1

    @property
    def n(self) -> int:
        return self.b.size

    @classmethod
    def leaky_init(cls, slope: float = 0.2, m: int = 5, n: int = 4, trainable: bool = True):
        """Coefficients that start out close to a leaky rectifier."""
        a = np.zeros(m + 1)
        a[1] = (1.0 + slope) / 2.0
        a[2] = (1.0 - slope) / 2.0 if m >= 2 else 0.0
        b = np.zeros(n)
        return cls(
            a=Tensor(a, requires_grad=trainable),
            b=Tensor(b, requires_grad=trainable),
        )


def pau(x, params: PauParams) -> Tensor:
    """Elementwise rational activation P(x) / (1 + |Q(x)|).

    Differentiable in x and in both coefficient vectors.
    """
    x = as_tensor(x)
    a, b = params.a, params.b
    m, n = params.m, params.n
    # Horner evaluation of the numerator.
    p = broadcast_to(reshape(slice_tail(a, (m,)), (1,) * x.ndim) if x.ndim else slice_tail(a, (m,)), x.shape)
    for j in range(m - 1, -1, -1):
        aj = slice_tail(a, (j,))
        p = add(mul(p, x), aj if x.ndim == 0 else broadcast_to(reshape(aj, (1,) * x.ndim), x.shape))
    # Horner evaluation of b_1 x + ... + b_n x^n.
    q = broadcast_to(reshape(slice_tail(b, (n - 1,)), (1,) * x.ndim) if x.ndim else slice_tail(b, (n - 1,)), x.shape)
    for k in range(n - 2, -1, -1):
        bk = slice_tail(b, (k,))
        q = add(mul(q, x), bk if x.ndim == 0 else broadcast_to(reshape(bk, (1,) * x.ndim), x.shape))
    q = mul(q, x)
    return div(p, add(absolute(q), 1.0))


# -- resizing ----------------------------------------------------------------

def _leading_flat(x: Tensor) -> tuple[Tensor, tuple[int, ...]]:
    lead = x.shape[:-2]
    flat = reshape(x, (-1,) + x.shape[-2:]) if lead else reshape(x, (1,) + x.shape)
    return flat, lead


def _restore(x: Tensor, lead: tuple[int, ...]) -> Tensor:
    return reshape(x, lead + x.shape[-2:]) if lead else reshape(x, x.shape[-2:])


def max_pool(x, factor: int) -> Tensor:
    """Max pooling with kernel = stride = factor over the trailing two axes."""
    x = as_tensor(x)
    f = int(factor)
    _check_pool(x, f)
    flat, lead = _leading_flat(x)
    n, h, w = flat.shape
    blocks = flat.data.reshape(n, h // f, f, w // f, f).transpose(0, 1, 3, 2, 4).reshape(n, h // f, w // f, f * f)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g: Tensor):
        if not flat.requires_grad:
            return (None,)
        gb = np.zeros((n, h // f, w // f, f * f))
        np.put_along_axis(gb, arg[..., None], g.data[..., None], axis=-1)
        gx = gb.reshape(n, h // f, w // f, f, f).transpose(0, 1, 3, 2, 4).reshape(n, h, w)
        return (Tensor(gx),)

    res = _make(out, (flat,), vjp, "max_pool")
    return _restore(res, lead)


def avg_pool(x, factor: int) -> Tensor:
    """Average pooling with kernel = stride = factor."""
    x = as_tensor(x)
    f = int(factor)
    _check_pool(x, f)
    flat, lead = _leading_flat(x)
    n, h, w = flat.shape

    def vjp(g: Tensor):
        if not flat.requires_grad:
            return (None,)
        gx = np.repeat(np.repeat(g.data, f, axis=-2), f, axis=-1) / (f * f)
        return (Tensor(gx),)

    out = flat.data.reshape(n, h // f, f, w // f, f).mean(axis=(2, 4))
    res = _make(out, (flat,), vjp, "avg_pool")
    return _restore(res, lead)


def _check_pool(x: Tensor, f: int):
    if f < 2:
        raise ValueError(f"pool factor must be >= 2, got {f}")
    h, w = x.shape[-2:]
    if h % f or w % f:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by pool factor {f}")


def nearest_up(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    x = as_tensor(x)
    f = int(factor)
    if f < 2:
        raise ValueError(f"upsample factor must be >= 2, got {f}")
    flat, lead = _leading_flat(x)

    def vjp(g: Tensor):
        if not flat.requires_grad:
            return (None,)
        n, H, W = g.shape
        gx = g.data.reshape(n, H // f, f, W // f, f).sum(axis=(2, 4))
        return (Tensor(gx),)

    out = np.repeat(np.repeat(flat.data, f, axis=-2), f, axis=-1)
    res = _make(out, (flat,), vjp, "nearest_up")
    return _restore(res, lead)


def _linear_up_matrix(n_in: int, factor: int) -> np.ndarray:
    """Row-stochastic interpolation matrix for 1d bilinear upsampling.

    Output sample i reads the source at (i + 0.5)/factor - 0.5, clamped to
    the valid range (half-pixel-centre convention).
    """
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        lo = min(lo, n_in - 2) if n_in > 1 else 0
        t = src - lo
        if n_in == 1:
            m[i, 0] = 1.0
        else:
            m[i, lo] = 1.0 - t
            m[i, lo + 1] = t
    return m


def bilinear_up(x, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor (separable linear map)."""
    x = as_tensor(x)
    f = int(factor)
    if f < 2:
        raise ValueError(f"upsample factor must be >= 2, got {f}")
    flat, lead = _leading_flat(x)
    n, h, w = flat.shape
    mh = _linear_up_matrix(h, f)
    mw = _linear_up_matrix(w, f)
    out = np.einsum("ij,njk,lk->nil", mh, flat.data, mw, optimize=True)

    def vjp(g: Tensor):
        if not flat.requires_grad:
            return (None,)
        gx = np.einsum("ij,nik,kl->njl", mh, g.data, mw, optimize=True)
        return (Tensor(gx),)

    res = _make(out, (flat,), vjp, "bilinear_up")
    return _restore(res, lead)


def zero_stuff(x, factor: int) -> Tensor:
    """Insert factor-1 zeros between samples along the trailing two axes."""
    x = as_tensor(x)
    f = int(factor)
    flat, lead = _leading_flat(x)
    n, h, w = flat.shape
    out = np.zeros((n, h * f, w * f))
    out[:, ::f, ::f] = flat.data

    def vjp(g: Tensor):
        if not flat.requires_grad:
            return (None,)
        return (Tensor(g.data[:, ::f, ::f].copy()),)

    res = _make(out, (flat,), vjp, "zero_stuff")
    return _restore(res, lead)


def transposed_conv_up(x, kernel, factor: int, bias=None) -> Tensor:
    """Learnable upsampling: stride-dilate the input, then convolve.

    ``x`` is [c_in,h,w] or [b,c_in,h,w]; ``kernel`` [c_out,c_in,k,k], k odd.
    """
    x = as_tensor(x)
    if int(factor) < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    stuffed = zero_stuff(x, factor)
    out = conv2d(stuffed, kernel, bias)
    return reshape(out, out.shape[1:]) if squeeze else out


_RESIZE_MODES = ("max_pool", "avg_pool", "nearest_up", "bilinear_up", "transposed_conv")


def resize_suite(x, factor: int, mode: str, kernel=None, bias=None) -> Tensor:
    """Dispatch to the pooling/upsampling family by name."""
    if mode == "max_pool":
        return max_pool(x, factor)
    if mode == "avg_pool":
        return avg_pool(x, factor)
    if mode == "nearest_up":
        return nearest_up(x, factor)
    if mode == "bilinear_up":
        return bilinear_up(x, factor)
    if mode == "transposed_conv":
        if kernel is None:
            raise ValueError("transposed_conv mode needs a kernel")
        return transposed_conv_up(x, kernel, factor, bias)
    raise ValueError(f"unknown resize mode {mode!r}; options: {_RESIZE_MODES}")


# -- spectral normalization ---------------------------------------------------

@dataclass
class SpectralNormState:
    """Persistent left/right power-iteration vectors for one weight matrix."""

    u: np.ndarray
    v: np.ndarray

    @classmethod
    def fresh(cls, out_dim: int, in_dim: int):
        u = np.ones(out_dim) / math.sqrt(out_dim)
        v = np.ones(in_dim) / math.sqrt(in_dim)
        return cls(u=u, v=v)


def spectral_normalize(
    weight_matrix, state: SpectralNormState | None = None, iterations: int = 1
) -> tuple[Tensor, SpectralNormState]:
    """Divide a weight matrix by its power-iteration largest singular value.

    The returned tensor is W / sigma_hat with sigma_hat = u^T W v; u, v are
    treated as constants so the gradient flows through both occurrences of W.
    A (near-)zero matrix is returned unchanged.
    """
    w = as_tensor(weight_matrix)
    if w.ndim != 2:
        raise ShapeError(f"spectral_normalize expects [out,in], got {w.shape}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    out_dim, in_dim = w.shape
    if state is None:
        state = SpectralNormState.fresh(out_dim, in_dim)
    wd = w.data
    u, v = state.u, state.v
    for _ in range(int(iterations)):
        v_new = wd.T @ u
        nv = np.linalg.norm(v_new)
        if nv < 1e-12:
            return w, state
        v = v_new / nv
        u_new = wd @ v
        nu = np.linalg.norm(u_new)
        if nu < 1e-12:
            return w, state
        u = u_new / nu
    state.u, state.v = u, v
    ut = Tensor(u.reshape(1, -1))
    vt = Tensor(v.reshape(-1, 1))
    sigma = reshape(ut @ w @ vt, ())
    if abs(sigma.item()) < 1e-12:
        return w, state
    return div(w, broadcast_to(reshape(sigma, (1, 1)), w.shape)), state
