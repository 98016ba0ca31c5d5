"""Dense float64 tensors with taped reverse-mode automatic differentiation.

The engine covers exactly the operations the scanning network needs: matmul,
broadcast elementwise arithmetic, the activations from the block definitions,
small same-padded convolutions, 2x bilinear resampling, row gather/scatter and
shape moves. Every differentiable op appends one backward closure to the
active GradTape; replaying the tape in reverse visits each recorded op once
(execution order is a topological order of the graph). Gradients accumulate
into ``Tensor.grad`` with ``+=`` and are cleared only by ``zero_grad``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import ConfigError, ContractError, ShapeError, ValidationError

_TAPE_STACK: list["GradTape"] = []

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def active_tape() -> "GradTape | None":
    """The innermost recording tape, or None outside any ``with tape:`` block."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class GradTape:
    """Execution-ordered record of differentiable operations.

    Use as a context manager around the forward computation, then call
    ``backward`` (or the module-level function) on a scalar output. One
    backward pass per tape; a tape is confined to one logical thread.
    """

    def __init__(self) -> None:
        self._ops: list = []
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, replay) -> None:
        self._ops.append(replay)

    def backward(self, output: "Tensor") -> None:
        backward(output, self)


class Tensor:
    """A float64 array plus an accumulated gradient of the same shape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: callers may hand over reused buffers
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def param(
    data,
    rng: np.random.Generator | None = None,
    fan_in: int | None = None,
    scale: float = 1.0,
) -> Tensor:
    """A trainable tensor; with rng and fan_in, init uniform in +-scale/sqrt(fan_in)."""
    if rng is not None:
        if fan_in is None or fan_in <= 0:
            raise ConfigError("fan_in must be positive for random init")
        bound = scale / math.sqrt(fan_in)
        shape = tuple(data) if isinstance(data, tuple) else np.asarray(data).shape
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    return Tensor(data, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, backward_fn) -> None:
    """Attach a replay closure for ``out`` to the active tape, if any."""
    tape = active_tape()
    if tape is None or not out.requires_grad:
        return

    def replay():
        g = out.grad
        if g is not None:
            backward_fn(g)

    tape.record(replay)


def backward(output: Tensor, tape: GradTape) -> None:
    """Seed d(output)/d(output) = 1 and replay the tape in reverse."""
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if tape._consumed:
        raise ContractError("tape already replayed; build a fresh tape per backward pass")
    tape._consumed = True
    output.accumulate(np.ones_like(output.data))
    for replay in reversed(tape._ops):
        replay()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    _record(out, bw)
    return out


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    _record(out, bw)
    return out


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)
        out = Tensor(a.data * s, a.requires_grad)

        def bw_scalar(g):
            a.accumulate(g * s)

        _record(out, bw_scalar)
        return out
    b = _as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    _record(out, bw)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, a.requires_grad)

    def bw(g):
        a.accumulate(-g)

    _record(out, bw)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs (m,k) @ (k,n), got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    _record(out, bw)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map: (L, C_in) @ (C_in, C_out) plus optional bias."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), a.requires_grad)

    def bw(g):
        a.accumulate(np.full_like(a.data, float(g)))

    _record(out, bw)
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean(), a.requires_grad)

    def bw(g):
        a.accumulate(np.full_like(a.data, float(g) / n))

    _record(out, bw)
    return out


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), a.requires_grad)

    def bw(g):
        # subgradient 0 at exactly 0
        a.accumulate(g * np.sign(a.data))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# activations


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, a.requires_grad)

    def bw(g):
        a.accumulate(g * y)

    _record(out, bw)
    return out


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data), a.requires_grad)

    def bw(g):
        a.accumulate(g * special.expit(a.data))

    _record(out, bw)
    return out


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf (no tanh shortcut)."""
    phi = 0.5 * (1.0 + special.erf(a.data / _SQRT2))
    out = Tensor(a.data * phi, a.requires_grad)

    def bw(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        a.accumulate(g * (phi + a.data * pdf))

    _record(out, bw)
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data >= 0.0, 1.0, slope)
    out = Tensor(a.data * factor, a.requires_grad)

    def bw(g):
        a.accumulate(g * factor)

    _record(out, bw)
    return out


def clamp01(a: Tensor) -> Tensor:
    """Clip to [0, 1]; gradient passes through the closed interval only."""
    out = Tensor(np.clip(a.data, 0.0, 1.0), a.requires_grad)

    def bw(g):
        inside = (a.data >= 0.0) & (a.data <= 1.0)
        a.accumulate(g * inside)

    _record(out, bw)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * keep, a.requires_grad)

    def bw(g):
        a.accumulate(g * keep)

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift per channel."""
    if x.shape[-1] != gain.data.shape[-1] or x.shape[-1] != bias.data.shape[-1]:
        raise ShapeError(
            f"layer_norm channel mismatch: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)

    def bw(g):
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gh = g * gain.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (gh - m1 - xhat * m2))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# convolutions (channels-first, odd kernels, zero-padded same output)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    c, h, w = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, k, k, h, w), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di : di + h, dj : dj + w]
    return cols


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int], k: int) -> np.ndarray:
    c, h, w = shape
    pad = k // 2
    dxp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            dxp[:, di : di + h, dj : dj + w] += dcols[:, di, dj]
    return dxp[:, pad : pad + h, pad : pad + w]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 2D convolution: (C_in,H,W) with (C_out,C_in,k,k) weights."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d needs (C,H,W) input and (O,C,k,k) weights, got {x.shape}, {w.shape}")
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ConfigError(f"conv2d kernel must be square and odd, got {k}x{k2}")
    if c_in != x.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weights {w.shape}")
    _, h, wd = x.shape
    cols = _im2col(x.data, k).reshape(c_in * k * k, h * wd)
    y = (w.data.reshape(c_out, -1) @ cols).reshape(c_out, h, wd)
    if b is not None:
        if b.data.shape != (c_out,):
            raise ShapeError(f"conv2d bias must be ({c_out},), got {b.shape}")
        y = y + b.data[:, None, None]
    out = Tensor(y, x.requires_grad or w.requires_grad or (b is not None and b.requires_grad))

    def bw(g):
        g2 = g.reshape(c_out, h * wd)
        if w.requires_grad:
            w.accumulate((g2 @ cols.T).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(1, 2)))
        if x.requires_grad:
            dcols = (w.data.reshape(c_out, -1).T @ g2).reshape(c_in, k, k, h, wd)
            x.accumulate(_col2im(dcols, x.data.shape, k))

    _record(out, bw)
    return out


def depthwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel same-padded convolution: (C,H,W) with (C,k,k) kernels."""
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"depthwise_conv2d needs (C,H,W) and (C,k,k), got {x.shape}, {w.shape}")
    c, h, wd = x.shape
    ck, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ConfigError(f"depthwise kernel must be square and odd, got {k}x{k2}")
    if ck != c:
        raise ShapeError(f"depthwise channel mismatch: input {x.shape} vs kernels {w.shape}")
    cols = _im2col(x.data, k).reshape(c, k * k, h * wd)
    y = (cols * w.data.reshape(c, k * k, 1)).sum(axis=1).reshape(c, h, wd)
    out = Tensor(y, x.requires_grad or w.requires_grad)

    def bw(g):
        g2 = g.reshape(c, 1, h * wd)
        if w.requires_grad:
            w.accumulate((cols * g2).sum(axis=2).reshape(c, k, k))
        if x.requires_grad:
            dcols = (w.data.reshape(c, k * k, 1) * g2).reshape(c, k, k, h, wd)
            x.accumulate(_col2im(dcols, x.data.shape, k))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# 2x resampling


def bilinear_downsample2x(x: Tensor) -> Tensor:
    """Halve a (C,H,W) map; with aligned centers this is the 2x2 block mean."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample needs even spatial dims, got {x.shape}")
    d = x.data
    y = 0.25 * (d[:, ::2, ::2] + d[:, 1::2, ::2] + d[:, ::2, 1::2] + d[:, 1::2, 1::2])
    out = Tensor(y, x.requires_grad)

    def bw(g):
        dx = np.zeros_like(d)
        q = 0.25 * g
        dx[:, ::2, ::2] += q
        dx[:, 1::2, ::2] += q
        dx[:, ::2, 1::2] += q
        dx[:, 1::2, 1::2] += q
        x.accumulate(dx)

    _record(out, bw)
    return out


def _up_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # output sample i reads source position (i + 0.5)/2 - 0.5, edges clamped
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    return np.clip(i0, 0, n - 1), np.clip(i0 + 1, 0, n - 1), frac


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Double a (C,H,W) map with bilinear interpolation, edge-replicated."""
    c, h, w = x.shape
    r0, r1, fr = _up_indices(h)
    c0, c1, fc = _up_indices(w)
    d = x.data
    fr_ = fr[None, :, None]
    fc_ = fc[None, None, :]
    top = (1.0 - fc_) * d[:, r0][:, :, c0] + fc_ * d[:, r0][:, :, c1]
    bot = (1.0 - fc_) * d[:, r1][:, :, c0] + fc_ * d[:, r1][:, :, c1]
    out = Tensor((1.0 - fr_) * top + fr_ * bot, x.requires_grad)

    def bw(g):
        dx = np.zeros_like(d)
        rows = (r0, r1)
        cols = (c0, c1)
        wr = (1.0 - fr_, fr_)
        wc = (1.0 - fc_, fc_)
        for a in range(2):
            for b_ in range(2):
                np.add.at(dx, (slice(None), rows[a][:, None], cols[b_][None, :]), wr[a] * wc[b_] * g)
        x.accumulate(dx)

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# row gather / scatter and shape moves


def invert_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size, dtype=perm.dtype)
    return inv


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows by index; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValidationError("gather index out of range")
    out = Tensor(x.data[idx], x.requires_grad)

    def bw(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        x.accumulate(dx)

    _record(out, bw)
    return out


def permute_gather(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder rows by a full permutation of range(L)."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (x.shape[0],) or not np.array_equal(np.sort(perm), np.arange(x.shape[0])):
        raise ValidationError(f"not a permutation of range({x.shape[0]})")
    return gather_rows(x, perm)


def reverse_rows(x: Tensor) -> Tensor:
    out = Tensor(x.data[::-1].copy(), x.requires_grad)

    def bw(g):
        x.accumulate(g[::-1])

    _record(out, bw)
    return out


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != b.ndim or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_rows needs matching trailing dims, got {a.shape}, {b.shape}")
    na = a.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0), a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[:na])
        if b.requires_grad:
            b.accumulate(g[na:])

    _record(out, bw)
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Join two (L, C) sequences along the channel axis."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols needs matching row counts, got {a.shape}, {b.shape}")
    na = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[:, :na])
        if b.requires_grad:
            b.accumulate(g[:, na:])

    _record(out, bw)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels needs matching (H,W), got {a.shape}, {b.shape}")
    na = a.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0), a.requires_grad or b.requires_grad)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g[:na])
        if b.requires_grad:
            b.accumulate(g[na:])

    _record(out, bw)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape), x.requires_grad)

    def bw(g):
        x.accumulate(g.reshape(x.data.shape))

    _record(out, bw)
    return out


def permute_dims(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)), x.requires_grad)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        x.accumulate(g.transpose(inverse))

    _record(out, bw)
    return out


def map_to_seq(x: Tensor) -> Tensor:
    """(C,H,W) map to (H*W, C) row-major token sequence."""
    c, h, w = x.shape
    return reshape(permute_dims(x, (1, 2, 0)), (h * w, c))


def seq_to_map(x: Tensor, h: int, w: int) -> Tensor:
    """(H*W, C) token sequence back to a (C,H,W) map."""
    l, c = x.shape
    if l != h * w:
        raise ShapeError(f"sequence length {l} does not fold to {h}x{w}")
    return permute_dims(reshape(x, (h, w, c)), (2, 0, 1))
