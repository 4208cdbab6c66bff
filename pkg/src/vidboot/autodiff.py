"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation performed on tensors that were
registered with it (``tape.watch``).  Operations whose inputs carry no tape
are evaluated eagerly and return constants, which is how frozen networks and
detached quantities are expressed.  A tape is meant for a single forward pass
and supports exactly one call to :meth:`Tape.backward`.

Broadcasting inside :func:`elementwise` is limited to scalar-vs-tensor; use
:func:`broadcast_to` to expand explicitly.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tabs",
    "texp",
    "tlog",
    "tsqrt",
    "square",
    "sigmoid",
    "elu",
    "clip_min",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "broadcast_to",
    "matmul",
    "where",
    "conv2d",
    "upsample_bilinear_x2",
    "avg_pool2x2",
    "box_filter3",
    "correlation",
    "softmax_channels",
    "log_softmax_channels",
    "record",
    "finite_difference_grad",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.flags.writeable:
        arr = arr.view()
        arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False, tape: "Tape | None" = None):
        self.data = _frozen(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("inputs", "out", "backward")

    def __init__(self, inputs, out, backward):
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []
        self._done = False

    def watch(self, value, name: str | None = None) -> Tensor:
        """Register ``value`` as a differentiable leaf on this tape."""
        data = value.data if isinstance(value, Tensor) else value
        leaf = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, tape=self)
        self.leaves.append(leaf)
        return leaf

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) into ``leaf.grad`` for every watched leaf.

        Gradients accumulate into any existing ``grad``.  Leaves that do not
        influence ``loss`` receive zeros.
        """
        if self._done:
            raise ContractError("backward already ran on this tape; build a new tape per pass")
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ContractError(f"loss must be a scalar tensor, got shape {getattr(loss, 'shape', None)}")
        self._done = True
        grads: dict[int, np.ndarray] = {}
        if loss.tape is self and loss.requires_grad:
            grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                k = id(t)
                grads[k] = grads[k] + gi if k in grads else gi
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _tape_of(inputs: Sequence[Tensor]) -> "Tape | None":
    tape = None
    for t in inputs:
        if t.requires_grad and t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("inputs belong to different tapes")
            tape = t.tape
    return tape


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``out_data`` as the output of an op over ``inputs``.

    ``backward(g)`` must return one gradient (or ``None``) per input.  When no
    input is tracked the result is a constant and ``backward`` is dropped.
    """
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(out_data)
    if tape._done:
        raise ContractError("cannot record on a tape after backward")
    out = Tensor(out_data, requires_grad=True, tape=tape)
    tape.nodes.append(_Node(tuple(inputs), out, backward))
    return out


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


_UNARY = {"neg", "abs", "exp", "log", "sqrt", "square", "sigmoid", "elu"}
_BINARY = {"add", "sub", "mul", "div"}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Apply a unary or binary elementwise op and record its derivative."""
    a = as_tensor(a)
    if op_kind in _UNARY:
        if b is not None:
            raise ContractError(f"{op_kind} takes one operand")
        return _unary(op_kind, a)
    if op_kind not in _BINARY:
        raise ContractError(f"unknown elementwise op {op_kind!r}")
    b = as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ContractError(f"shape mismatch for {op_kind}: {a.shape} vs {b.shape}")
    x, y = a.data, b.data
    if a.size != 1:
        out_shape = a.shape
    elif b.size != 1:
        out_shape = b.shape
    else:
        out_shape = a.shape if a.ndim >= b.ndim else b.shape
    ga, gb = a.requires_grad, b.requires_grad
    if op_kind == "add":
        out = x + y
        bw = lambda g: (_unbroadcast(g, a.shape) if ga else None, _unbroadcast(g, b.shape) if gb else None)
    elif op_kind == "sub":
        out = x - y
        bw = lambda g: (_unbroadcast(g, a.shape) if ga else None, _unbroadcast(-g, b.shape) if gb else None)
    elif op_kind == "mul":
        out = x * y
        bw = lambda g: (
            _unbroadcast(g * y, a.shape) if ga else None,
            _unbroadcast(g * x, b.shape) if gb else None,
        )
    else:
        if np.any(y == 0):
            raise DomainError("division by zero")
        out = x / y
        bw = lambda g: (
            _unbroadcast(g / y, a.shape) if ga else None,
            _unbroadcast(-g * x / (y * y), b.shape) if gb else None,
        )
    return record(np.asarray(out).reshape(out_shape), (a, b), bw)


def _unary(kind: str, a: Tensor) -> Tensor:
    x = a.data
    if kind == "neg":
        return record(-x, (a,), lambda g: (-g,))
    if kind == "abs":
        # subgradient 0 at the kink
        return record(np.abs(x), (a,), lambda g: (g * np.sign(x),))
    if kind == "exp":
        out = np.exp(x)
        return record(out, (a,), lambda g: (g * out,))
    if kind == "log":
        if np.any(x <= 0):
            raise DomainError("log of non-positive value")
        return record(np.log(x), (a,), lambda g: (g / x,))
    if kind == "sqrt":
        if np.any(x < 0):
            raise DomainError("sqrt of negative value")
        out = np.sqrt(x)
        return record(out, (a,), lambda g: (g * 0.5 / out,))
    if kind == "square":
        return record(x * x, (a,), lambda g: (2.0 * g * x,))
    if kind == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return record(out, (a,), lambda g: (g * out * (1.0 - out),))
    # elu with alpha = 1 (continuously differentiable)
    neg_part = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return record(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + 1.0),))


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def div(a, b):
    return elementwise("div", a, b)


def neg(a):
    return elementwise("neg", a)


def tabs(a):
    return elementwise("abs", a)


def texp(a):
    return elementwise("exp", a)


def tlog(a):
    return elementwise("log", a)


def tsqrt(a):
    return elementwise("sqrt", a)


def square(a):
    return elementwise("square", a)


def sigmoid(a):
    return elementwise("sigmoid", a)


def elu(a):
    return elementwise("elu", a)


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor); values below the floor receive no gradient."""
    a = as_tensor(a)
    keep = a.data >= floor
    return record(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# structural ops


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record(np.asarray(out), (a,), bw)


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return record(np.array(a.data[index]), (a,), bw)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    out = np.concatenate([t.data for t in ts], axis=axis)
    return record(out, ts, lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return record(out, ts, lambda g: tuple(np.squeeze(p, axis) for p in np.split(g, n, axis=axis)))


def broadcast_to(a, shape) -> Tensor:
    """Expand ``a`` to ``shape`` by numpy rules; backward sums the copies."""
    a = as_tensor(a)
    shape = tuple(shape)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ContractError(f"cannot broadcast {src} to {shape}") from exc
    lead = len(shape) - len(src)

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return record(np.array(out), (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shapes {a.shape} @ {b.shape}")
    x, y = a.data, b.data
    return record(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select from ``a`` where ``mask`` else ``b``; the mask is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or mask.shape != a.shape:
        raise ContractError(f"where shapes {mask.shape}, {a.shape}, {b.shape}")
    return record(np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask))


# ---------------------------------------------------------------------------
# image ops


def conv2d(x, kernel, stride: int = 1, padding: int = 0, bias=None) -> Tensor:
    """2-D cross-correlation of a [C,H,W] input with a [C',C,k,k] kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ContractError(f"conv2d expects [C,H,W] and [C',C,k,k], got {x.shape}, {kernel.shape}")
    c, h, w = x.shape
    co, ci, k, k2 = kernel.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ContractError(f"kernel {kernel.shape} incompatible with input {x.shape} (k must be odd)")
    if stride < 1 or padding < 0:
        raise ContractError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ContractError(f"input {x.shape} smaller than kernel {k}")
    if (hp - k) % stride or (wp - k) % stride:
        raise ContractError(f"non-integer output size for H={h}, W={w}, k={k}, stride={stride}, padding={padding}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    wmat = kernel.data.reshape(co, -1)
    out = (wmat @ cols).reshape(co, ho, wo)
    inputs = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (co,):
            raise ContractError(f"bias shape {bias.shape} != ({co},)")
        out = out + bias.data[:, None, None]
        inputs.append(bias)

    def bw(g):
        g2 = g.reshape(co, -1)
        gk = (g2 @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(c, k, k, ho, wo)
            gxp = np.zeros((c, hp, wp))
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
            gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return record(out, inputs, bw)


def _upsample_matrix(n: int) -> np.ndarray:
    # fine pixel j sits at coarse coordinate (j - 0.5) / 2, clamped to the grid
    m = np.zeros((2 * n, n))
    for j in range(2 * n):
        u = min(max((j - 0.5) / 2.0, 0.0), n - 1.0)
        i0 = min(int(np.floor(u)), max(n - 2, 0))
        f = u - i0
        m[j, i0] += 1.0 - f
        if f > 0:
            m[j, i0 + 1] += f
    return m


def upsample_bilinear_x2(x) -> Tensor:
    """Bilinear 2x upsampling of a [C,H,W] map (half-pixel aligned, edge clamped)."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] < 1 or x.shape[2] < 1:
        raise ContractError(f"expected [C,H,W], got {x.shape}")
    uh, uw = _upsample_matrix(x.shape[1]), _upsample_matrix(x.shape[2])
    out = np.einsum("ih,chw,jw->cij", uh, x.data, uw, optimize=True)
    return record(out, (x,), lambda g: (np.einsum("ih,cij,jw->chw", uh, g, uw, optimize=True),))


def avg_pool2x2(x) -> Tensor:
    """Average over non-overlapping 2x2 blocks of the last two axes."""
    x = as_tensor(x)
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"avg_pool2x2 needs even spatial dims, got {x.shape}")
    out = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25,)

    return record(out, (x,), bw)


def box_filter3(x) -> Tensor:
    """Uniform 3x3 mean over each valid window of a [C,H,W] map -> [C,H-2,W-2]."""
    x = as_tensor(x)
    c, h, w = x.shape
    if h < 3 or w < 3:
        raise ContractError(f"box_filter3 needs H, W >= 3, got {x.shape}")
    d = x.data
    out = np.zeros((c, h - 2, w - 2))
    for i in range(3):
        for j in range(3):
            out += d[:, i : i + h - 2, j : j + w - 2]
    out /= 9.0

    def bw(g):
        gx = np.zeros((c, h, w))
        g9 = g / 9.0
        for i in range(3):
            for j in range(3):
                gx[:, i : i + h - 2, j : j + w - 2] += g9
        return (gx,)

    return record(out, (x,), bw)


def correlation(a, b, max_disp: int) -> Tensor:
    """Local cost volume between two [C,H,W] feature maps.

    Output channel ``k`` for displacement ``(dy, dx)`` (row-major over
    ``[-r, r]^2``) holds ``mean_c a[c, y, x] * b[c, y + dy, x + dx]``, with
    ``b`` zero outside the image.  Shape [(2r+1)^2, H, W].
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or a.shape != b.shape:
        raise ContractError(f"correlation needs two equal [C,H,W] maps, got {a.shape} and {b.shape}")
    if max_disp < 0:
        raise ContractError("max_disp must be >= 0")
    c, h, w = a.shape
    r = max_disp
    bp = np.pad(b.data, ((0, 0), (r, r), (r, r)))
    shifts = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    out = np.empty((len(shifts), h, w))
    for k, (dy, dx) in enumerate(shifts):
        out[k] = np.einsum("chw,chw->hw", a.data, bp[:, r + dy : r + dy + h, r + dx : r + dx + w]) / c

    def bw(g):
        ga = np.zeros((c, h, w)) if a.requires_grad else None
        gbp = np.zeros_like(bp) if b.requires_grad else None
        for k, (dy, dx) in enumerate(shifts):
            gk = g[k] / c
            win = (slice(None), slice(r + dy, r + dy + h), slice(r + dx, r + dx + w))
            if ga is not None:
                ga += gk * bp[win]
            if gbp is not None:
                gbp[win] += gk * a.data
        gb = gbp[:, r : r + h, r : r + w] if gbp is not None else None
        return ga, gb

    return record(out, (a, b), bw)


def softmax_channels(x) -> Tensor:
    """Softmax over axis 0 of a [C,H,W] map."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] < 2:
        raise ContractError(f"softmax_channels expects [C>=2,H,W], got {x.shape}")
    z = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=0, keepdims=True)
    return record(s, (x,), lambda g: (s * (g - (g * s).sum(axis=0, keepdims=True)),))


def log_softmax_channels(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[0] < 2:
        raise ContractError(f"log_softmax_channels expects [C>=2,H,W], got {x.shape}")
    z = x.data - x.data.max(axis=0, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=0, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return record(out, (x,), lambda g: (g - s * g.sum(axis=0, keepdims=True),))


# ---------------------------------------------------------------------------
# oracle


def finite_difference_grad(f: Callable[[np.ndarray], float], params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``params``.

    ``f`` receives a float64 array shaped like ``params`` and must return a
    float.  Cost is two evaluations per coordinate.
    """
    x = np.array(params.data if isinstance(params, Tensor) else params, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x.copy()))
        flat[i] = orig - eps
        fm = float(f(x.copy()))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
