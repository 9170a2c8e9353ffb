"""Dense float32 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous float32 numpy array. Operations executed
while a ``Tape`` is active are recorded in execution order; ``backward``
replays the record in exact reverse order and accumulates gradients into
every contributing tensor with ``requires_grad`` set (``Parameter`` leaves
in particular). Without an active tape, ops run as plain numpy and nothing
is tracked, which is the inference path.

Tensors are immutable values once produced. A tape and its parameters
belong to a single training thread; concurrent forward passes are safe as
long as each uses its own tape.

Every op verifies its output is finite and raises ``NumericalError``
otherwise, so NaN/Inf are reported at the op that produced them.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, NumericalError, UsageError

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "reshape",
    "transpose",
    "tensor_sum",
    "tensor_mean",
    "relu",
    "clip",
    "gelu",
    "sigmoid",
    "softmax",
    "layer_norm",
    "conv2d",
    "depthwise_conv2d",
    "transposed_conv2d",
    "upsample",
    "bilinear_matrix",
]


class Tensor:
    """Dense N-dimensional float32 array; the universal value type."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor with a zero-initialized gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        if not np.isfinite(self.data).all():
            raise NumericalError(f"parameter {name!r} initialized with non-finite values")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class _Record:
    """One executed differentiable op: inputs, output, and its adjoint."""

    __slots__ = ("inputs", "out", "backward_fn")

    def __init__(self, inputs, out, backward_fn):
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Execution-ordered record of differentiable ops, replayed in reverse."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._records)


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into every contributing tensor's ``grad``.

    ``loss`` must be a scalar produced under an active (or recently active)
    tape; its records are replayed in exact reverse execution order.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        raise UsageError("loss was not recorded on a tape; wrap the forward pass in `with Tape():`")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(loss.tape._records):
        g = rec.out.grad
        if g is None:
            continue
        grads = rec.backward_fn(g)
        for t, gi in zip(rec.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            gi = np.asarray(gi, dtype=np.float32)
            if t.grad is None:
                t.grad = gi.copy()
            else:
                t.grad = t.grad + gi


def _require_finite(data: np.ndarray, opname: str) -> None:
    if not np.isfinite(data).all():
        raise NumericalError(f"{opname} produced a non-finite value")


def _emit(opname: str, inputs: Sequence[Tensor], data: np.ndarray,
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    data = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
    _require_finite(data, opname)
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._records.append(_Record(tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcastable(a_shape: tuple, b_shape: tuple, opname: str) -> None:
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a_shape} and {b_shape} do not align") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        return _emit("add", (a,), a.data + np.float32(s), lambda g: (g,))
    _check_broadcastable(a.shape, b.shape, "add")
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = float(b)
        return _emit("sub", (a,), a.data - np.float32(s), lambda g: (g,))
    _check_broadcastable(a.shape, b.shape, "sub")
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        s = np.float32(float(b))
        return _emit("mul", (a,), a.data * s, lambda g: (g * s,))
    _check_broadcastable(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    _check_broadcastable(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    return _emit("div", (a, b), ad / bd,
                 lambda g: (_unbroadcast(g / bd, a.shape),
                            _unbroadcast(-g * ad / (bd * bd), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors, or stacked product over equal leading dims."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim != bd.ndim or ad.shape[:-2] != bd.shape[:-2] \
            or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: shapes {ad.shape} and {bd.shape} do not align")

    def bwd(g):
        return (g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g)

    return _emit("matmul", (a, b), ad @ bd, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", (a,), a.data.transpose(axes),
                 lambda g: (g.transpose(inv),))


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        return _emit("sum", (a,), a.data.sum(),
                     lambda g: (np.full(a.shape, g, dtype=np.float32),))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)

    def bwd(g):
        ge = g
        for ax in sorted(axes):
            ge = np.expand_dims(ge, ax)
        return (np.broadcast_to(ge, a.shape).astype(np.float32),)

    return _emit("sum", (a,), a.data.sum(axis=axes), bwd)


def tensor_mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.size
        return _emit("mean", (a,), a.data.mean(),
                     lambda g: (np.full(a.shape, g / n, dtype=np.float32),))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = int(np.prod([a.shape[ax] for ax in axes]))

    def bwd(g):
        ge = g / n
        for ax in sorted(axes):
            ge = np.expand_dims(ge, ax)
        return (np.broadcast_to(ge, a.shape).astype(np.float32),)

    return _emit("mean", (a,), a.data.mean(axis=axes), bwd)


# ---------------------------------------------------------------------------
# activations and normalization
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Clamp values to [low, high]; gradient passes through inside the window."""
    inside = (a.data >= low) & (a.data <= high)
    return _emit("clip", (a,), np.clip(a.data, low, high),
                 lambda g: (g * inside,))


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU with the tanh approximation."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _emit("gelu", (a,), out, bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, computed with max subtraction for stability."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _emit("softmax", (a,), y, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the trailing (channel) axis per position, then affine."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} "
            f"do not match channel count {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    diff = xd - mu
    var = (diff * diff).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = diff * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        reduce_axes = tuple(range(xd.ndim - 1))
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        return (dx, dgamma, dbeta)

    return _emit("layer_norm", (x, gamma, beta), out, bwd)


# ---------------------------------------------------------------------------
# convolutions and resampling
# ---------------------------------------------------------------------------

def _same_pad(extent: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(out_extent, pad_begin, pad_end) for zero 'same' padding."""
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of an H×W×Cin map with a kh×kw×Cin×Cout kernel."""
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 3-D input and 4-D kernel, "
                             f"got {x.shape} and {k.shape}")
    h, w, cin = x.shape
    kh, kw, kcin, cout = k.shape
    if cin != kcin:
        raise DimensionError(f"conv2d: input channels {x.shape} do not match kernel {k.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    if padding == "same":
        oh, pt, pb = _same_pad(h, kh, stride)
        ow, pl, pr = _same_pad(w, kw, stride)
    elif padding == "valid":
        if h < kh or w < kw:
            raise DimensionError(f"conv2d: input {x.shape} smaller than kernel {k.shape}")
        oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ConfigError(f"conv2d: unknown padding {padding!r}")

    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(oh * ow, kh * kw * cin)
    k2 = k.data.reshape(kh * kw * cin, cout)
    out = (cols @ k2).reshape(oh, ow, cout)

    def bwd(g):
        g2 = g.reshape(oh * ow, cout)
        grad_k = (cols.T @ g2).reshape(kh, kw, cin, cout)
        gwin = (g2 @ k2.T).reshape(oh, ow, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + stride * (oh - 1) + 1:stride,
                    j:j + stride * (ow - 1) + 1:stride, :] += gwin[:, :, i, j, :]
        return (gxp[pt:pt + h, pl:pl + w, :], grad_k)

    return _emit("conv2d", (x, k), out, bwd)


def depthwise_conv2d(x: Tensor, k: Tensor) -> Tensor:
    """Per-channel cross-correlation (stride 1, same padding): no channel mixing."""
    if x.data.ndim != 3 or k.data.ndim != 3:
        raise DimensionError(f"depthwise_conv2d: expected 3-D input and kernel, "
                             f"got {x.shape} and {k.shape}")
    h, w, c = x.shape
    kh, kw, kc = k.shape
    if c != kc:
        raise DimensionError(f"depthwise_conv2d: channels {x.shape} do not match kernel {k.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"depthwise_conv2d: kernel extents must be odd, got {kh}x{kw}")
    pt, pl = kh // 2, kw // 2
    xp = np.pad(x.data, ((pt, pt), (pl, pl), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # (h, w, c, kh, kw)
    out = np.einsum("hwcij,ijc->hwc", win, k.data)

    def bwd(g):
        grad_k = np.einsum("hwcij,hwc->ijc", win, g)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i:i + h, j:j + w, :] += g * k.data[i, j, :]
        return (gxp[pt:pt + h, pl:pl + w, :], grad_k)

    return _emit("depthwise_conv2d", (x, k), out, bwd)


def transposed_conv2d(x: Tensor, k: Tensor, stride: int = 2) -> Tensor:
    """Doubling transposed convolution: the adjoint of stride-2 'same' conv2d.

    ``x`` is H×W×Cin, ``k`` is kh×kw×Cout×Cin, the result is 2H×2W×Cout.
    The identity <conv2d_s2(z, k), x> == <z, transposed_conv2d(x, k)> holds
    with the same kernel array, where conv2d_s2 maps Cout -> Cin channels.
    """
    if stride != 2:
        raise ConfigError(f"transposed_conv2d: stride is fixed at 2, got {stride}")
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise DimensionError(f"transposed_conv2d: expected 3-D input and 4-D kernel, "
                             f"got {x.shape} and {k.shape}")
    h, w, cin = x.shape
    kh, kw, cout, kcin = k.shape
    if cin != kcin:
        raise DimensionError(f"transposed_conv2d: input channels {x.shape} "
                             f"do not match kernel {k.shape}")
    if kh != kw or kh not in (2, 4):
        raise ConfigError(f"transposed_conv2d: kernel must be 2x2 or 4x4, got {kh}x{kw}")
    oh, ow = 2 * h, 2 * w
    _, pt, pb = _same_pad(oh, kh, 2)
    _, pl, pr = _same_pad(ow, kw, 2)

    k2 = k.data.reshape(kh * kw * cout, cin)
    x2 = x.data.reshape(h * w, cin)
    contrib = (x2 @ k2.T).reshape(h, w, kh, kw, cout)
    buf = np.zeros((oh + pt + pb, ow + pl + pr, cout), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            buf[i:i + 2 * (h - 1) + 1:2, j:j + 2 * (w - 1) + 1:2, :] += contrib[:, :, i, j, :]
    out = buf[pt:pt + oh, pl:pl + ow, :]

    def bwd(g):
        gp = np.pad(g, ((pt, pb), (pl, pr), (0, 0)))
        win = sliding_window_view(gp, (kh, kw), axis=(0, 1))[::2, ::2]
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, kh * kw * cout)
        grad_x = (cols @ k2).reshape(h, w, cin)
        grad_k = (cols.T @ x2).reshape(kh, kw, cout, cin)
        return (grad_x, grad_k)

    return _emit("transposed_conv2d", (x, k), out, bwd)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) interpolation matrix, half-pixel centers."""
    a = np.zeros((n_out, n_in), dtype=np.float32)
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    frac = (src - i0).astype(np.float32)
    i1 = np.minimum(i0 + 1, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - frac)
    np.add.at(a, (rows, i1), frac)
    return a


def upsample(x: Tensor, factor: int, mode: str = "bilinear") -> Tensor:
    """Bilinear upsampling by 2 or 4 with half-pixel (align_corners=false) centers."""
    if factor not in (2, 4):
        raise ConfigError(f"upsample: factor must be 2 or 4, got {factor}")
    if mode != "bilinear":
        raise ConfigError(f"upsample: unknown mode {mode!r}")
    if x.data.ndim != 3:
        raise DimensionError(f"upsample: expected H x W x C input, got {x.shape}")
    h, w, _ = x.shape
    ah = bilinear_matrix(h, h * factor)
    aw = bilinear_matrix(w, w * factor)
    out = np.einsum("oh,hwc,pw->opc", ah, x.data, aw)

    def bwd(g):
        return (np.einsum("oh,opc,pw->hwc", ah, g, aw),)

    return _emit("upsample", (x,), out, bwd)
