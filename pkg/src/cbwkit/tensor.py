"""Dense tensors with reverse-mode gradient accumulation.

Storage is a numpy array; every op records its parents and a closure that maps
the output gradient to parent gradients. ``backward`` replays those closures in
reverse topological order.

Binary elementwise ops only accept equal shapes or a rank-0 operand. Anything
wider goes through an explicit ``broadcast_to``.
"""
from __future__ import annotations

import contextlib
import itertools
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True
_division = {"strict": True, "eps": 1e-12}
_creation = itertools.count()  # global creation stamp; orders the backward tape


@contextlib.contextmanager
def no_grad():
    """Ops run inside this block produce tensors with no tape edges."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def division_guard(eps: float = 1e-12):
    """Replace exact-zero denominators by ``eps`` instead of raising."""
    prev = dict(_division)
    _division.update(strict=False, eps=eps)
    try:
        yield
    finally:
        _division.update(prev)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self._seq = next(_creation)

    # -- bookkeeping ---------------------------------------------------------
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

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return detach(self)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operators -----------------------------------------------------------
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is not None:
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._seq = next(_creation)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _const_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = Tensor(a)
    if isinstance(a, Tensor):
        b = _const_like(b, a)
    else:
        a = _const_like(a, b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}; only rank-0 operands broadcast")
    return a, b


# -- Tape / backward -----------------------------------------------------------


class Tape:
    """Ordered record of the nodes reachable from a root, in topological order.

    Nodes are ordered by creation, which is topological because a node is always
    created after its parents. Unlike a depth-first order, it does not depend on which
    other branches hang off the graph, so gradient contributions into a shared node are
    summed in the same order when unrelated branches are added or removed.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        found: dict[int, Tensor] = {id(root): root}
        stack = [root]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if p.requires_grad and id(p) not in found:
                    found[id(p)] = p
                    stack.append(p)
        return cls(sorted(found.values(), key=lambda n: n._seq))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def reversed(self):
        return reversed(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into ``leaf.grad`` for every tracked leaf."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise RuntimeError("backward() called on a tensor that is not on the tape")
    if loss.ndim != 0:
        raise ValueError(f"backward() needs a rank-0 loss, got shape {loss.shape}")
    tape = Tape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in tape.reversed():
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_fit_red(g, sa), _fit_red(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_fit_red(g, sa), _fit_red(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _fit_red(g * bd, ad.shape) if a.requires_grad else None,
            _fit_red(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        if _division["strict"]:
            raise ZeroDivisionError("division by exact zero")
        bd = np.where(bd == 0, np.asarray(_division["eps"], dtype=bd.dtype), bd)
    out = ad / bd

    def bw(g):
        return (
            _fit_red(g / bd, ad.shape) if a.requires_grad else None,
            _fit_red(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), bw, "div")


def _fit_red(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def abs(a: Tensor) -> Tensor:  # noqa: A001
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),), "abs")


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def elu(a: Tensor) -> Tensor:
    ad = a.data
    pos = ad > 0
    ex = np.exp(np.minimum(ad, 0))
    out = np.where(pos, ad, ex - 1.0)
    return _make(out, (a,), lambda g: (g * np.where(pos, 1.0, ex).astype(ad.dtype),), "elu")


def minimum(a: Tensor, c: float) -> Tensor:
    keep = a.data <= c
    return _make(np.minimum(a.data, c), (a,), lambda g: (g * keep,), "minimum")


def maximum(a: Tensor, c: float) -> Tensor:
    keep = a.data >= c
    return _make(np.maximum(a.data, c), (a,), lambda g: (g * keep,), "maximum")


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    ad = a.data
    inside = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        inside &= ad >= lo
    if hi is not None:
        inside &= ad <= hi
    return _make(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond, dtype=bool)
    a, b = _pair(a, b)
    shape = np.broadcast_shapes(a.shape, b.shape)
    if cond.shape != shape:
        raise ValueError(f"mask shape {cond.shape} does not match {shape}")

    def bw(g):
        return (
            _fit_red(np.where(cond, g, 0), a.shape) if a.requires_grad else None,
            _fit_red(np.where(cond, 0, g), b.shape) if b.requires_grad else None,
        )

    return _make(np.where(cond, a.data, b.data), (a, b), bw, "where")


# -- reductions and shape ops --------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
    return tuple(ax % ndim for ax in axis)


def reduce(a: Tensor, kind: str = "sum", axis=None, keepdims: bool = False) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    axes = _norm_axes(axis, a.ndim)
    if a.size == 0 or (axis is not None and len(axes) == 0 and a.ndim > 0):
        raise ValueError("empty reduction set")
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ValueError("empty reduction set")
    out = a.data.sum(axis=axes, keepdims=keepdims)
    if kind == "mean":
        out = out / count
    out = np.asarray(out, dtype=a.dtype)
    shape = a.shape
    scale = 1.0 if kind == "sum" else 1.0 / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape).astype(a.dtype),)

    return _make(out, (a,), bw, kind)


def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return reduce(a, "sum", axis, keepdims)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    return reduce(a, "mean", axis, keepdims)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    lead = len(shape) - len(src)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _make(np.broadcast_to(a.data, shape), (a,), bw, "broadcast_to")


def getitem(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.dtype
    fancy = isinstance(idx, (list, np.ndarray)) or (
        isinstance(idx, tuple) and any(isinstance(i, (list, np.ndarray)) for i in idx)
    )

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw, "getitem")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = next((t for t in ts if t.requires_grad), ts[0])
    ts = [t if t.dtype == ref.dtype else Tensor(t.data.astype(ref.dtype)) for t in ts]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, bw, "stack")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, bw, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        if ga is not None and ga.shape != ad.shape:
            ga = ga.reshape(-1, *ad.shape).sum(0)
        if gb is not None and gb.shape != bd.shape:
            gb = gb.reshape(-1, *bd.shape).sum(0)
        return ga, gb

    return _make(ad @ bd, (a, b), bw, "matmul")


# -- image ops -----------------------------------------------------------------


@lru_cache(maxsize=256)
def _reflect_matrix(n: int, p: int, dtype_str: str) -> tuple[np.ndarray, np.ndarray]:
    idx = np.pad(np.arange(n), p, mode="reflect") if n > 1 else np.zeros(n + 2 * p, dtype=int)
    onehot = np.zeros((n + 2 * p, n), dtype=dtype_str)
    onehot[np.arange(n + 2 * p), idx] = 1.0
    return idx, onehot


def pad2d(a: Tensor, p: int, mode: str = "reflection") -> Tensor:
    """Pad the last two axes by ``p`` on each side."""
    if p == 0:
        return a
    h, w = a.shape[-2:]
    if mode == "zero":
        widths = [(0, 0)] * (a.ndim - 2) + [(p, p), (p, p)]
        return _make(np.pad(a.data, widths), (a,), lambda g: (g[..., p:-p, p:-p],), "pad_zero")
    if mode != "reflection":
        raise ValueError(f"unknown padding mode {mode!r}")
    if p == 1 and h >= 2 and w >= 2:
        widths = [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)]
        return _make(np.pad(a.data, widths, mode="reflect"), (a,), _fold_reflect1, "pad_reflect")
    ih, ph = _reflect_matrix(h, p, a.dtype.str)
    iw, pw = _reflect_matrix(w, p, a.dtype.str)
    out = a.data[..., ih[:, None], iw[None, :]]
    return _make(out, (a,), lambda g: (ph.T @ g @ pw,), "pad_reflect")


def _fold_reflect1(g: np.ndarray) -> tuple[np.ndarray]:
    rows = g[..., 1:-1, :].copy()
    rows[..., 1, :] += g[..., 0, :]
    rows[..., -2, :] += g[..., -1, :]
    out = rows[..., 1:-1].copy()
    out[..., 1] += rows[..., 0]
    out[..., -2] += rows[..., -1]
    return (out,)


def _im2col(xd: np.ndarray, kh: int, kw: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Patches as a [C*kH*kW, N*Ho*Wo] matrix (channel-major rows, sample-major columns)."""
    n, c, h, w = xd.shape
    ho, wo = (h - kh) // stride + 1, (w - kw) // stride + 1
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xd.dtype)
    xt = xd.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    return cols.reshape(c * kh * kw, n * ho * wo), ho, wo


def _conv_valid(xd: np.ndarray, wd: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    n = xd.shape[0]
    f = wd.shape[0]
    cols, ho, wo = _im2col(xd, wd.shape[2], wd.shape[3], stride)
    out = (wd.reshape(f, -1) @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "reflection",
) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``weight[F,C,kH,kW]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects 4-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, weight {weight.shape[1]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    xp = pad2d(x, padding, pad_mode) if padding else x
    n, c, h, w = xp.shape
    f, _, kh, kw = weight.shape
    if kh > h or kw > w:
        raise ValueError("kernel larger than padded input")
    xd, wd = xp.data, weight.data
    out, cols = _conv_valid(xd, wd, stride)
    ho, wo = out.shape[2:]
    if bias is not None:
        out += bias.data.reshape(1, f, 1, 1)

    def bw(g):
        gx = gw = gb = None
        g_fn = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
        if xp.requires_grad:
            if stride == 1:
                # transposed convolution: full correlation with the flipped kernel
                gp = np.zeros((n, f, h + kh - 1, w + kw - 1), dtype=g.dtype)
                gp[:, :, kh - 1 : kh - 1 + ho, kw - 1 : kw - 1 + wo] = g
                wf = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                gx, _ = _conv_valid(gp, wf, 1)
            else:
                gcols = (wd.reshape(f, -1).T @ g_fn).reshape(c, kh, kw, n, ho, wo)
                gx = np.zeros(xd.shape, dtype=xd.dtype)
                gxt = gx.transpose(1, 0, 2, 3)
                for i in range(kh):
                    for j in range(kw):
                        gxt[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
        if weight.requires_grad:
            gw = (g_fn @ cols.T).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (xp, weight) + ((bias,) if bias is not None else ())
    return _make(out, parents, bw, "conv2d")


def avg_pool(x: Tensor, k: int = 3) -> Tensor:
    """Unpadded stride-1 ``k x k`` box mean over the last two axes."""
    h, w = x.shape[-2:]
    ho, wo = h - k + 1, w - k + 1
    xd = x.data
    out = np.zeros(xd.shape[:-2] + (ho, wo), dtype=xd.dtype)
    for i in range(k):
        for j in range(k):
            out += xd[..., i : i + ho, j : j + wo]
    out /= k * k

    def bw(g):
        gx = np.zeros(xd.shape, dtype=xd.dtype)
        gk = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[..., i : i + ho, j : j + wo] += gk
        return (gx,)

    return _make(out, (x,), bw, "avg_pool")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    h, w = x.shape[-2:]
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    lead = x.shape[:-2]
    return _make(out, (x,), lambda g: (g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)),), "upsample2x")


def downsample2x(x: Tensor) -> Tensor:
    """2x2 area average of the last two axes."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"cannot area-downsample odd size {(h, w)}")
    lead = x.shape[:-2]
    out = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def bw(g):
        return ((g.repeat(2, axis=-2).repeat(2, axis=-1) * 0.25).astype(x.dtype),)

    return _make(out, (x,), bw, "downsample2x")


def grid_sample_bilinear(m: Tensor, coords: Tensor) -> tuple[Tensor, Tensor]:
    """Bilinearly sample ``m[N,C,H,W]`` at pixel ``coords[N,H',W',2]`` (x right, y down).

    Points outside ``[0, W-1] x [0, H-1]`` give 0 and ``in_bounds`` 0.
    """
    m, coords = as_tensor(m), as_tensor(coords)
    n, c, h, w = m.shape
    if h < 2 or w < 2:
        raise ValueError("grid_sample needs H, W >= 2")
    if coords.shape[0] != n or coords.shape[-1] != 2:
        raise ValueError(f"coords shape {coords.shape} incompatible with map {m.shape}")
    out_hw = coords.shape[1:3]
    cd = coords.data.reshape(n, -1, 2)
    x, y = cd[..., 0], cd[..., 1]
    inb = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    x0 = np.clip(np.floor(np.where(inb, x, 0)), 0, w - 2)
    y0 = np.clip(np.floor(np.where(inb, y, 0)), 0, h - 2)
    wx = np.where(inb, x - x0, 0).astype(m.dtype)
    wy = np.where(inb, y - y0, 0).astype(m.dtype)
    x0i, y0i = x0.astype(np.intp), y0.astype(np.intp)
    i00 = y0i * w + x0i
    idx = (i00, i00 + 1, i00 + w, i00 + w + 1)
    flat = m.data.reshape(n, c, h * w)
    v = [np.stack([np.take(flat[b], i[b], axis=1) for b in range(n)]) for i in idx]
    mask = inb.astype(m.dtype)
    w00 = (1 - wx) * (1 - wy) * mask
    w01 = wx * (1 - wy) * mask
    w10 = (1 - wx) * wy * mask
    w11 = wx * wy * mask
    weights = (w00, w01, w10, w11)
    out = sum_(wk[:, None, :] * vk for wk, vk in zip(weights, v))
    out = out.reshape(n, c, *out_hw)

    def bw(g):
        g = g.reshape(n, c, -1)
        gm = gc = None
        if m.requires_grad:
            base = (np.arange(n)[:, None] * c + np.arange(c)[None, :])[:, :, None] * (h * w)
            all_idx = np.concatenate([(base + i[:, None, :]).ravel() for i in idx])
            all_w = np.concatenate([(g * wk[:, None, :]).ravel() for wk in weights])
            gm = np.bincount(all_idx, weights=all_w, minlength=n * c * h * w)
            gm = gm.reshape(n, c, h, w).astype(m.dtype)
        if coords.requires_grad:
            dx = (1 - wy)[:, None, :] * (v[1] - v[0]) + wy[:, None, :] * (v[3] - v[2])
            dy = (1 - wx)[:, None, :] * (v[2] - v[0]) + wx[:, None, :] * (v[3] - v[1])
            gx = (g * dx).sum(axis=1) * mask
            gy = (g * dy).sum(axis=1) * mask
            gc = np.stack([gx, gy], axis=-1).reshape(coords.shape)
        return gm, gc

    sampled = _make(out, (m, coords), bw, "grid_sample")
    return sampled, Tensor(mask.reshape(n, *out_hw))


def sum_(items: Iterable[np.ndarray]) -> np.ndarray:
    it = iter(items)
    acc = next(it).copy()
    for item in it:
        acc += item
    return acc


def spatial_gradient(m: Tensor) -> tuple[Tensor, Tensor]:
    """Forward differences along x and y; the last column / row is zero."""
    if m.shape[-1] < 2 or m.shape[-2] < 2:
        raise ValueError("spatial_gradient needs H, W >= 2")
    md = m.data
    dx = np.zeros_like(md)
    dx[..., :, :-1] = md[..., :, 1:] - md[..., :, :-1]
    dy = np.zeros_like(md)
    dy[..., :-1, :] = md[..., 1:, :] - md[..., :-1, :]

    def bw_x(g):
        gi = np.zeros_like(g)
        gi[..., :, 1:] += g[..., :, :-1]
        gi[..., :, :-1] -= g[..., :, :-1]
        return (gi,)

    def bw_y(g):
        gi = np.zeros_like(g)
        gi[..., 1:, :] += g[..., :-1, :]
        gi[..., :-1, :] -= g[..., :-1, :]
        return (gi,)

    return _make(dx, (m,), bw_x, "grad_x"), _make(dy, (m,), bw_y, "grad_y")
