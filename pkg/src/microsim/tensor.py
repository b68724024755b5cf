"""Dense float64 arrays with reverse-mode gradient accumulation.

Every value in this package lives in a :class:`Tensor`: a C-ordered float64
ndarray plus an optional accumulated gradient.  Operations build an explicit
expression graph; calling :func:`backward` on a scalar result walks the graph
in reverse topological order and accumulates gradients into the participating
leaf tensors.  :func:`grad` is the functional variant and can keep the
gradient computation itself differentiable (``create_graph=True``), which the
dense algebra ops support (needed for gradient-norm penalties).  Structured
image kernels (convolution, resampling, pooling) provide first-order
gradients only.

Broadcast rule: operands must have equal rank, and an axis may differ only
when one side has size 1 (which is expanded).  Rank-0 tensors and Python
scalars combine with anything.  There is no implicit rank promotion.

Non-finite values are an error state: any operation whose result contains
NaN or +-Inf raises :class:`NonFiniteError` instead of propagating it.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """Input outside the mathematical domain of the operation."""


class NonFiniteError(FloatingPointError):
    """A computed value is NaN or infinite."""


def _check_finite(data: np.ndarray, ctx: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {ctx}")


class Tensor:
    """n-dimensional float64 array with optional gradient accumulation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        data = np.asarray(values, dtype=np.float64)
        if not data.flags.c_contiguous:
            data = np.ascontiguousarray(data)
        _check_finite(data, name or "tensor construction")
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Tensor], tuple] | None = None
        self.name = name

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
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        backward(self, seed)

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _broadcast_shape(sa: tuple[int, ...], sb: tuple[int, ...]) -> tuple[int, ...]:
    if sa == ():
        return sb
    if sb == ():
        return sa
    if len(sa) != len(sb):
        raise ShapeError(
            f"broadcast requires equal rank (no implicit promotion): {sa} vs {sb}"
        )
    out = []
    for da, db in zip(sa, sb):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"shapes {sa} and {sb} do not broadcast")
    return tuple(out)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp, ctx: str) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, name=ctx)
    if requires:
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` along axes the forward pass broadcast."""
    if g.shape == shape:
        return g
    if shape == ():
        return tsum(g)
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    return tsum(g, axis=axes, keepdims=True)


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def vjp(g: Tensor):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def vjp(g: Tensor):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def vjp(g: Tensor):
        ga = _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)

    def vjp(g: Tensor):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g: Tensor):
        return (neg(g),) if a.requires_grad else (None,)

    return _make(-a.data, (a,), vjp, "neg")


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant real exponent."""
    a = as_tensor(a)
    p = float(p)
    if p != int(p) and np.any(a.data < 0):
        raise DomainError(f"x**{p} undefined for negative base")

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _make(a.data**p, (a,), vjp, "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def vjp(g: Tensor):
        return (mul(g, Tensor(out_data)),) if a.requires_grad else (None,)

    return _make(out_data, (a,), vjp, "exp")


def expm1(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g: Tensor):
        return (mul(g, exp(a)),) if a.requires_grad else (None,)

    return _make(np.expm1(a.data), (a,), vjp, "expm1")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input")

    def vjp(g: Tensor):
        return (div(g, a),) if a.requires_grad else (None,)

    return _make(np.log(a.data), (a,), vjp, "log")


def log1p(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= -1):
        raise DomainError("log1p of input <= -1")

    def vjp(g: Tensor):
        return (div(g, add(a, 1.0)),) if a.requires_grad else (None,)

    return _make(np.log1p(a.data), (a,), vjp, "log1p")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative input")
    out_data = np.sqrt(a.data)

    def vjp(g: Tensor):
        # d/dx sqrt = 1/(2 sqrt); infinite at 0, surfaced as NonFiniteError.
        return (div(g, mul(Tensor(out_data), 2.0)),) if a.requires_grad else (None,)

    return _make(out_data, (a,), vjp, "sqrt")


def absolute(a) -> Tensor:
    """Elementwise |a|; subgradient 0 at the kink."""
    a = as_tensor(a)
    sign = np.sign(a.data)

    def vjp(g: Tensor):
        return (mul(g, Tensor(sign)),) if a.requires_grad else (None,)

    return _make(np.abs(a.data), (a,), vjp, "abs")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                            np.exp(a.data) / (1.0 + np.exp(a.data)))

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        y = Tensor(out_data)
        return (mul(g, mul(y, sub(1.0, y))),)

    return _make(out_data, (a,), vjp, "sigmoid")


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    """max(alpha*x, x); slope 1 is taken at exactly 0."""
    a = as_tensor(a)
    slope = np.where(a.data >= 0, 1.0, float(alpha))

    def vjp(g: Tensor):
        return (mul(g, Tensor(slope)),) if a.requires_grad else (None,)

    return _make(np.maximum(float(alpha) * a.data, a.data), (a,), vjp, "leaky_relu")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        y = Tensor(out_data)
        inner = tsum(mul(g, y), axis=axis, keepdims=True)
        return (mul(y, sub(g, inner)),)

    return _make(out_data, (a,), vjp, "softmax")


# -- linear algebra and shape ops -----------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def vjp(g: Tensor):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2d tensor, got {a.shape}")

    def vjp(g: Tensor):
        return (transpose(g),) if a.requires_grad else (None,)

    return _make(a.data.T.copy(), (a,), vjp, "transpose")


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g: Tensor):
        return (permute(g, inv),) if a.requires_grad else (None,)

    return _make(np.transpose(a.data, axes).copy(), (a,), vjp, "permute")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    orig = a.shape

    def vjp(g: Tensor):
        return (reshape(g, orig),) if a.requires_grad else (None,)

    return _make(a.data.reshape(shape).copy(), (a,), vjp, "reshape")


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    _broadcast_shape(shape, a.shape)  # validates compatibility
    orig = a.shape

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        if orig == ():
            return (tsum(g),)
        return (_unbroadcast(g, orig),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), vjp, "broadcast_to")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % max(a.ndim, 1),)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    orig = a.shape

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        kept = list(orig)
        for ax in axes:
            kept[ax] = 1
        gk = g if (keepdims or not orig) else reshape(g, kept)
        if gk.shape == ():
            gk = reshape(gk, (1,) * len(orig)) if orig else gk
        return (broadcast_to(gk, orig) if orig else gk,)

    return _make(np.sum(a.data, axis=axes if axis is not None else None, keepdims=keepdims), (a,), vjp, "sum")


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.shape[ax % a.ndim]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dot(a, b) -> Tensor:
    """Sum of the elementwise product (inner product for equal shapes)."""
    return tsum(mul(a, b))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of empty sequence")
    axis = axis % ts[0].ndim
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: Tensor):
        outs = []
        for t, start, size in zip(ts, offsets[:-1], sizes):
            outs.append(narrow(g, axis, int(start), int(size)) if t.requires_grad else None)
        return tuple(outs)

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), vjp, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = as_tensor(a)
    axis = axis % a.ndim
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    orig = a.shape

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        return (_scatter(g, orig, sl),)

    return _make(a.data[sl].copy(), (a,), vjp, "narrow")


def slice_tail(a, idx: Sequence[int]) -> Tensor:
    """``a[..., i, j, ...]`` with fixed trailing indices; keeps leading axes."""
    a = as_tensor(a)
    idx = tuple(int(i) for i in idx)
    if len(idx) > a.ndim:
        raise ShapeError(f"slice_tail index {idx} too long for shape {a.shape}")
    sl = (Ellipsis,) + idx
    orig = a.shape

    def vjp(g: Tensor):
        if not a.requires_grad:
            return (None,)
        return (_scatter(g, orig, sl),)

    return _make(a.data[sl].copy(), (a,), vjp, "slice_tail")


def _scatter(g: Tensor, shape: tuple[int, ...], sl) -> Tensor:
    """Zero-fill scatter of ``g`` into ``shape`` at slice ``sl`` (linear op)."""

    def vjp(gg: Tensor):
        return (Tensor(gg.data[sl].copy()),) if g.requires_grad else (None,)

    buf = np.zeros(shape)
    buf[sl] = g.data
    return _make(buf, (g,), vjp, "scatter")


def shift2d(a, dy: int, dx: int) -> Tensor:
    """Integer shift over the trailing two axes, zero-filled (no wraparound).

    ``out[..., y, x] = a[..., y - dy, x - dx]`` when in range, else 0.
    """
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"shift2d needs >= 2 dims, got {a.shape}")
    dy, dx = int(dy), int(dx)

    def do_shift(arr: np.ndarray, sy: int, sx: int) -> np.ndarray:
        out = np.zeros_like(arr)
        h, w = arr.shape[-2:]
        ys = slice(max(sy, 0), min(h + sy, h))
        yd = slice(max(-sy, 0), min(h - sy, h))
        xs = slice(max(sx, 0), min(w + sx, w))
        xd = slice(max(-sx, 0), min(w - sx, w))
        if ys.start < ys.stop and xs.start < xs.stop:
            out[..., ys, xs] = arr[..., yd, xd]
        return out

    def vjp(g: Tensor):
        return (shift2d(g, -dy, -dx),) if a.requires_grad else (None,)

    return _make(do_shift(a.data, dy, dx), (a,), vjp, "shift2d")


# -- graph traversal -------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def _run_backward(root: Tensor, seed: Tensor) -> dict[int, Tensor]:
    gmap: dict[int, Tensor] = {id(root): seed}
    for node in reversed(_topo_order(root)):
        g = gmap.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            prev = gmap.get(id(p))
            gmap[id(p)] = pg if prev is None else add(prev, pg)
    return gmap


def backward(out: Tensor, seed: np.ndarray | None = None) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every reachable leaf."""
    if not out.requires_grad:
        raise ValueError("backward on a tensor that does not require grad")
    if seed is None:
        if out.size != 1:
            raise ShapeError(f"backward without seed needs a scalar, got {out.shape}")
        seed_t = Tensor(np.ones_like(out.data))
    else:
        seed_t = Tensor(np.asarray(seed, dtype=np.float64))
        if seed_t.shape != out.shape:
            raise ShapeError(f"seed shape {seed_t.shape} != output shape {out.shape}")
    gmap = _run_backward(out, seed_t)
    for node in _topo_order(out):
        if node._vjp is None and node.requires_grad:
            g = gmap.get(id(node))
            if g is None:
                continue
            _check_finite(g.data, "gradient accumulation")
            node.grad = g.data.copy() if node.grad is None else node.grad + g.data


def grad(out: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``out`` w.r.t. each tensor in ``wrt``.

    With ``create_graph=True`` the returned tensors stay connected to the
    graph, so expressions of them (e.g. gradient norms) can be differentiated
    again.  Only the dense algebra ops support this nesting.
    """
    if out.size != 1:
        raise ShapeError(f"grad needs a scalar output, got {out.shape}")
    if not out.requires_grad:
        return [Tensor(np.zeros(w.shape)) for w in wrt]
    gmap = _run_backward(out, Tensor(np.ones_like(out.data)))
    results = []
    for w in wrt:
        g = gmap.get(id(w))
        if g is None:
            g = Tensor(np.zeros(w.shape))
        results.append(g if create_graph else g.detach())
    return results
