"""Backward resampling, per-pixel kernel transforms, and the
spatially-displaced convolution.

Coordinate convention: x indexes columns, y indexes rows; ``u`` is the
horizontal displacement and ``v`` the vertical one, both in pixels.  An
output pixel (x, y) reads the source image around (x + u, y + v).

Border handling: standalone resampling defaults to clamp-to-edge; per-pixel
kernel transforms zero-pad their patches (convolutional convention).  The
displaced convolution samples its patch taps with zero fill so that it
reduces exactly to the kernel transform at zero flow and to zero-fill
resampling for middle-one-hot kernels, at every pixel including borders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _make,
    add,
    as_tensor,
    mul,
    slice_tail,
)

_BORDERS = ("clamp", "zeros")


@dataclass
class MotionField:
    """Per-pixel displacement pair in pixel units."""

    u: Tensor
    v: Tensor

    def __post_init__(self):
        self.u = as_tensor(self.u)
        self.v = as_tensor(self.v)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError(f"motion field needs matching [h,w] u/v, got {self.u.shape}, {self.v.shape}")

    @classmethod
    def zero(cls, h: int, w: int) -> "MotionField":
        return cls(u=Tensor(np.zeros((h, w))), v=Tensor(np.zeros((h, w))))

    @classmethod
    def constant(cls, h: int, w: int, du: float, dv: float) -> "MotionField":
        return cls(u=Tensor(np.full((h, w), float(du))), v=Tensor(np.full((h, w), float(dv))))


@dataclass
class SeparableKernelField:
    """Per-pixel pair of length-N 1d kernels; the 2d kernel is their outer product.

    ``k_v[y, x, a]`` weights row offset a - (N-1)/2 and ``k_h[y, x, b]``
    column offset b - (N-1)/2.
    """

    k_h: Tensor
    k_v: Tensor

    def __post_init__(self):
        self.k_h = as_tensor(self.k_h)
        self.k_v = as_tensor(self.k_v)
        if self.k_h.shape != self.k_v.shape or self.k_h.ndim != 3:
            raise ShapeError(
                f"kernel field needs matching [h,w,N] pairs, got {self.k_h.shape}, {self.k_v.shape}"
            )
        if self.n % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {self.n}")

    @property
    def n(self) -> int:
        return self.k_h.shape[2]

    @classmethod
    def identity(cls, h: int, w: int, n: int) -> "SeparableKernelField":
        one_hot = middle_one_hot(n)
        k = np.broadcast_to(one_hot, (h, w, n)).copy()
        return cls(k_h=Tensor(k), k_v=Tensor(k.copy()))


def middle_one_hot(n: int) -> np.ndarray:
    """Length-n vector with a single 1 at index (n-1)/2."""
    n = int(n)
    if n < 1 or n % 2 == 0:
        raise ValueError(f"middle_one_hot needs a positive odd length, got {n}")
    vec = np.zeros(n)
    vec[(n - 1) // 2] = 1.0
    return vec


def grid_sample(image, gx, gy, border: str = "clamp") -> Tensor:
    """Bilinear lookup of ``image`` at real-valued coordinates (gx, gy).

    ``border='clamp'`` repeats edge pixels outside the image; ``'zeros'``
    treats outside values as 0.  Differentiable w.r.t. the image and both
    coordinate fields (away from integer-coordinate knots).
    """
    img, gx, gy = as_tensor(image), as_tensor(gx), as_tensor(gy)
    if img.ndim != 2:
        raise ShapeError(f"grid_sample image must be [h,w], got {img.shape}")
    if gx.shape != gy.shape:
        raise ShapeError(f"coordinate shapes differ: {gx.shape} vs {gy.shape}")
    if border not in _BORDERS:
        raise ValueError(f"unknown border {border!r}; options: {_BORDERS}")
    h, w = img.shape
    xd, yd = gx.data, gy.data

    if border == "clamp":
        xs = np.clip(xd, 0.0, w - 1.0)
        ys = np.clip(yd, 0.0, h - 1.0)
        dxs = ((xd > 0.0) & (xd < w - 1.0)).astype(float)
        dys = ((yd > 0.0) & (yd < h - 1.0)).astype(float)
    else:
        xs, ys = xd, yd
        dxs = np.ones_like(xd)
        dys = np.ones_like(yd)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    tx = xs - x0
    ty = ys - y0
    x1 = x0 + 1
    y1 = y0 + 1

    def gather(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = img.data[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside, vals, 0.0), inside

    if border == "clamp":
        x0c = np.clip(x0, 0, w - 1)
        x1c = np.clip(x1, 0, w - 1)
        y0c = np.clip(y0, 0, h - 1)
        y1c = np.clip(y1, 0, h - 1)
        v00 = img.data[y0c, x0c]
        v01 = img.data[y0c, x1c]
        v10 = img.data[y1c, x0c]
        v11 = img.data[y1c, x1c]
        m00 = m01 = m10 = m11 = np.ones_like(v00, dtype=bool)
        ix = (x0c, x1c, y0c, y1c)
    else:
        v00, m00 = gather(y0, x0)
        v01, m01 = gather(y0, x1)
        v10, m10 = gather(y1, x0)
        v11, m11 = gather(y1, x1)
        ix = (np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1), np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1))

    w00 = (1 - tx) * (1 - ty)
    w01 = tx * (1 - ty)
    w10 = (1 - tx) * ty
    w11 = tx * ty
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def vjp(g: Tensor):
        gd = g.data
        gi = gxg = gyg = None
        if img.requires_grad:
            buf = np.zeros((h, w))
            x0i, x1i, y0i, y1i = ix
            np.add.at(buf, (y0i, x0i), gd * w00 * m00)
            np.add.at(buf, (y0i, x1i), gd * w01 * m01)
            np.add.at(buf, (y1i, x0i), gd * w10 * m10)
            np.add.at(buf, (y1i, x1i), gd * w11 * m11)
            gi = Tensor(buf)
        if gx.requires_grad:
            dx = ((v01 - v00) * (1 - ty) + (v11 - v10) * ty) * dxs
            gxg = Tensor(gd * dx)
        if gy.requires_grad:
            dy = ((v10 - v00) * (1 - tx) + (v11 - v01) * tx) * dys
            gyg = Tensor(gd * dy)
        return gi, gxg, gyg

    return _make(out, (img, gx, gy), vjp, "grid_sample")


def _base_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return xs, ys


def bilinear_resample(image, flow: MotionField, border: str = "clamp") -> Tensor:
    """Backward warp: out(x, y) = image sampled bilinearly at (x+u, y+v)."""
    img = as_tensor(image)
    if img.shape != flow.u.shape:
        raise ShapeError(f"image {img.shape} vs flow {flow.u.shape} mismatch")
    xs, ys = _base_grid(*img.shape)
    gx = add(flow.u, Tensor(xs))
    gy = add(flow.v, Tensor(ys))
    return grid_sample(img, gx, gy, border=border)


def kernel_transform(image, kernels) -> Tensor:
    """Per-pixel convolution with an N x N kernel over a zero-padded patch.

    ``kernels`` is [h, w, N, N]; entry [y, x, a, b] weights the source pixel
    (y + a - c, x + b - c) with c = (N-1)/2.
    """
    img = as_tensor(image)
    k = as_tensor(kernels)
    if img.ndim != 2 or k.ndim != 4:
        raise ShapeError(f"kernel_transform expects [h,w] and [h,w,N,N], got {img.shape}, {k.shape}")
    if k.shape[:2] != img.shape or k.shape[2] != k.shape[3]:
        raise ShapeError(f"kernel field {k.shape} does not match image {img.shape}")
    n = k.shape[2]
    if n % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {n}")
    c = (n - 1) // 2
    out = None
    from .tensor import shift2d

    for a in range(n):
        for b in range(n):
            # view[y, x] = img[y + a - c, x + b - c], zeros outside
            view = shift2d(img, -(a - c), -(b - c))
            term = mul(slice_tail(k, (a, b)), view)
            out = term if out is None else add(out, term)
    return out


def sdc(image, flow: MotionField, kernels: SeparableKernelField) -> Tensor:
    """Spatially-displaced convolution.

    out(x, y) = sum_{a,b} k_v[y,x,a] * k_h[y,x,b] *
                image sampled at (x + u + b - c,  y + v + a - c)

    with zero-fill sampling, so zero flow reduces it to
    :func:`kernel_transform` and middle-one-hot kernels reduce it to
    :func:`bilinear_resample` with the ``zeros`` border.  Differentiable
    w.r.t. the image, both flow components, and both 1d kernel fields.
    """
    img = as_tensor(image)
    if img.shape != flow.u.shape or img.shape != kernels.k_h.shape[:2]:
        raise ShapeError(
            f"sdc shape mismatch: image {img.shape}, flow {flow.u.shape}, kernels {kernels.k_h.shape}"
        )
    n = kernels.n
    c = (n - 1) // 2
    xs, ys = _base_grid(*img.shape)
    gx0 = add(flow.u, Tensor(xs))
    gy0 = add(flow.v, Tensor(ys))
    out = None
    for a in range(n):
        kv_a = slice_tail(kernels.k_v, (a,))
        gy = add(gy0, float(a - c)) if a != c else gy0
        for b in range(n):
            kh_b = slice_tail(kernels.k_h, (b,))
            gx = add(gx0, float(b - c)) if b != c else gx0
            tap = grid_sample(img, gx, gy, border="zeros")
            term = mul(mul(kv_a, kh_b), tap)
            out = term if out is None else add(out, term)
    return out
