"""Dense tensors with reverse-mode autodiff on a per-thread operation tape.

Every op records a backward rule onto the active tape; backward() replays the
tape in exact reverse execution order and accumulates gradients additively.
Arrays are row-major numpy buffers, float32 by default, float64 for gradient
verification.
"""

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import erf, expit

DEFAULT_DTYPE = np.float32

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NumericError(ValueError):
    """Non-finite values fed into an op that requires finite input."""


class Tensor:
    """N-dimensional real array with an optional gradient slot.

    `grad` is populated by backward(); it exists only while requires_grad is
    set and always matches `data` in shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


# ---------------------------------------------------------------------------
# tape machinery

class _TapeState(threading.local):
    def __init__(self):
        self.nodes = []     # (output, backward_fn) in execution order
        self.enabled = True


_state = _TapeState()


def tape_length():
    return len(_state.nodes)


@contextmanager
def no_grad():
    """Disable tape recording (evaluation / finite-difference probing)."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _record(out, backward_fn):
    if _state.enabled and out.requires_grad:
        _state.nodes.append((out, backward_fn))


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t, grad):
    if not t.requires_grad:
        return
    grad = _unbroadcast(grad, t.data.shape)
    if t.grad is None:
        t.grad = grad.astype(t.data.dtype, copy=True)
    else:
        t.grad += grad


def backward(loss):
    """Propagate d(loss)/d(tensor) into every requires_grad tensor on the tape.

    The tape is consumed: a second backward without a fresh forward raises.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not require grad; nothing to differentiate")
    nodes = _state.nodes
    if not any(out is loss for out, _ in nodes):
        raise RuntimeError("loss is not on the tape (backward called twice without re-forward?)")
    _state.nodes = []
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(nodes):
        if out.grad is not None:
            fn(out.grad)


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    _record(out, bw)
    return out


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    _record(out, bw)
    return out


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)
    ad, bd = a.data, b.data

    def bw(g):
        _accumulate(a, g * bd)
        _accumulate(b, g * ad)

    _record(out, bw)
    return out


def neg(a):
    out = Tensor(-a.data, requires_grad=a.requires_grad)

    def bw(g):
        _accumulate(a, -g)

    _record(out, bw)
    return out


def rsqrt(a):
    y = 1.0 / np.sqrt(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bw(g):
        _accumulate(a, g * (-0.5 * y ** 3))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# reductions and rearrangement

def sum_(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)
    shape = a.data.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, shape))

    _record(out, bw)
    return out


def mean(a, axis=None, keepdims=False):
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad)
    shape = a.data.shape
    count = a.data.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, shape) / count)

    _record(out, bw)
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    orig = a.data.shape

    def bw(g):
        _accumulate(a, g.reshape(orig))

    _record(out, bw)
    return out


def transpose(a, axes):
    out = Tensor(a.data.transpose(axes), requires_grad=a.requires_grad)
    inverse = np.argsort(axes)

    def bw(g):
        _accumulate(a, g.transpose(inverse))

    _record(out, bw)
    return out


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along `axis`."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.data[index].copy(), requires_grad=a.requires_grad)
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        _accumulate(a, full)

    _record(out, bw)
    return out


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 requires_grad=any(t.requires_grad for t in tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + n)
            _accumulate(t, g[tuple(index)])
            offset += n

    _record(out, bw)
    return out


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), requires_grad=a.requires_grad or b.requires_grad)
    ad, bd = a.data, b.data

    def bw(g):
        _accumulate(a, np.matmul(g, bd.swapaxes(-1, -2)))
        _accumulate(b, np.matmul(ad.swapaxes(-1, -2), g))

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# activations

def relu(a):
    out = Tensor(np.maximum(a.data, 0), requires_grad=a.requires_grad)
    mask = a.data > 0

    def bw(g):
        _accumulate(a, g * mask)

    _record(out, bw)
    return out


def tanh_act(a):
    y = np.tanh(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bw(g):
        _accumulate(a, g * (1.0 - y * y))

    _record(out, bw)
    return out


def sigmoid_act(a):
    y = expit(a.data)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bw(g):
        _accumulate(a, g * y * (1.0 - y))

    _record(out, bw)
    return out


def gelu(a):
    """Exact Gaussian-CDF GELU: x * Phi(x), Phi via erf."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out = Tensor(x * phi_cdf, requires_grad=a.requires_grad)

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _accumulate(a, g * (phi_cdf + x * pdf))

    _record(out, bw)
    return out


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - inner) * y)

    _record(out, bw)
    return out


def layer_norm(a, gain, shift, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.shape != a.shape[-1:] or shift.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm gain/shift must match last extent {a.shape[-1]}, "
            f"got {gain.shape} / {shift.shape}")
    mu = mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = rsqrt(add(var, float(eps)))
    return add(mul(mul(centered, inv), gain), shift)


# ---------------------------------------------------------------------------
# convolutions (stride 1, no dilation, cross-correlation semantics)

def _require_finite(name, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite values")


def _conv_windows(arr, kernel_extents):
    """Sliding windows over the trailing len(kernel_extents) axes (view)."""
    lead = arr.shape[:arr.ndim - len(kernel_extents)]
    spatial = arr.shape[arr.ndim - len(kernel_extents):]
    out_extents = tuple(s - k + 1 for s, k in zip(spatial, kernel_extents))
    if min(out_extents) <= 0:
        raise ShapeError(
            f"kernel extents {kernel_extents} exceed padded input extents {spatial}")
    spatial_strides = arr.strides[arr.ndim - len(kernel_extents):]
    shape = lead + out_extents + tuple(kernel_extents)
    strides = arr.strides[:arr.ndim - len(kernel_extents)] + spatial_strides + spatial_strides
    return as_strided(arr, shape=shape, strides=strides)


def conv3d(x, kernels, bias, padding=(0, 0, 0)):
    """Stride-1 3-D cross-correlation.

    x: (Cin, D, H, W) or batched (B, Cin, D, H, W); kernels: (Cout, Cin, kD, kH, kW);
    bias: (Cout,). Output depth is D + 2*padD - kD + 1, analogously for H and W.
    """
    if isinstance(padding, int):
        padding = (padding,) * 3
    if kernels.ndim != 5:
        raise ShapeError(f"conv3d kernels must be rank 5, got {kernels.shape}")
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv3d bias must be ({kernels.shape[0]},), got {bias.shape}")
    batched = x.ndim == 5
    if not batched and x.ndim != 4:
        raise ShapeError(f"conv3d input must be rank 4 or 5, got {x.shape}")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"conv3d channel mismatch: input has {xd.shape[1]}, kernels expect {kernels.shape[1]}")
    _require_finite("conv3d input", xd)
    pd, ph, pw = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    kd_, kh_, kw_ = kernels.shape[2:]
    win = _conv_windows(xp, (kd_, kh_, kw_))
    bsz, ci = xd.shape[:2]
    od, oh, ow = win.shape[2:5]
    co = kernels.shape[0]
    # one GEMM per sample keeps identical samples bitwise identical in a batch
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(
        bsz, od * oh * ow, ci * kd_ * kh_ * kw_)
    y = np.matmul(cols, kernels.data.reshape(co, -1).T)
    y = np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(bsz, co, od, oh, ow)
    y += bias.data[None, :, None, None, None]
    out = Tensor(y if batched else y[0],
                 requires_grad=x.requires_grad or kernels.requires_grad or bias.requires_grad)
    in_spatial = xd.shape[2:]

    def bw(g):
        gb = g if batched else g[None]
        _accumulate(bias, gb.sum(axis=(0, 2, 3, 4)))
        _accumulate(kernels, np.einsum("bcdhwijk,bodhw->ocijk", win, gb, optimize=True))
        if x.requires_grad:
            gp = np.pad(gb, ((0, 0), (0, 0), (kd_ - 1,) * 2, (kh_ - 1,) * 2, (kw_ - 1,) * 2))
            gwin = _conv_windows(gp, (kd_, kh_, kw_))
            flipped = kernels.data[:, :, ::-1, ::-1, ::-1]
            gx = np.einsum("bodhwijk,ocijk->bcdhw", gwin, flipped, optimize=True)
            gx = gx[:, :, pd:pd + in_spatial[0], ph:ph + in_spatial[1], pw:pw + in_spatial[2]]
            _accumulate(x, gx if batched else gx[0])

    _record(out, bw)
    return out


def conv2d(x, kernels, bias, padding=(0, 0)):
    """Stride-1 2-D cross-correlation; shapes are the 2-D analog of conv3d."""
    if isinstance(padding, int):
        padding = (padding,) * 2
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d kernels must be rank 4, got {kernels.shape}")
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"conv2d bias must be ({kernels.shape[0]},), got {bias.shape}")
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise ShapeError(f"conv2d input must be rank 3 or 4, got {x.shape}")
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {xd.shape[1]}, kernels expect {kernels.shape[1]}")
    _require_finite("conv2d input", xd)
    ph, pw = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    kh_, kw_ = kernels.shape[2:]
    win = _conv_windows(xp, (kh_, kw_))
    bsz, ci = xd.shape[:2]
    oh, ow = win.shape[2:4]
    co = kernels.shape[0]
    # one GEMM per sample keeps identical samples bitwise identical in a batch
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz, oh * ow, ci * kh_ * kw_)
    y = np.matmul(cols, kernels.data.reshape(co, -1).T)
    y = np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(bsz, co, oh, ow)
    y += bias.data[None, :, None, None]
    out = Tensor(y if batched else y[0],
                 requires_grad=x.requires_grad or kernels.requires_grad or bias.requires_grad)
    in_spatial = xd.shape[2:]

    def bw(g):
        gb = g if batched else g[None]
        _accumulate(bias, gb.sum(axis=(0, 2, 3)))
        _accumulate(kernels, np.einsum("bchwij,bohw->ocij", win, gb, optimize=True))
        if x.requires_grad:
            gp = np.pad(gb, ((0, 0), (0, 0), (kh_ - 1,) * 2, (kw_ - 1,) * 2))
            gwin = _conv_windows(gp, (kh_, kw_))
            flipped = kernels.data[:, :, ::-1, ::-1]
            gx = np.einsum("bohwij,ocij->bchw", gwin, flipped, optimize=True)
            gx = gx[:, :, ph:ph + in_spatial[0], pw:pw + in_spatial[1]]
            _accumulate(x, gx if batched else gx[0])

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# axis shift (zero fill at the vacated edge)

def shift_axis(a, axis, direction):
    """Displace content one step along `axis`; 'forward' moves toward higher
    indices, 'backward' toward lower. The vacated slice is zero-filled."""
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    nd = a.ndim
    dst = [slice(None)] * nd
    src = [slice(None)] * nd
    if direction == "forward":
        dst[axis], src[axis] = slice(1, None), slice(0, -1)
    else:
        dst[axis], src[axis] = slice(0, -1), slice(1, None)
    dst, src = tuple(dst), tuple(src)
    y = np.zeros_like(a.data)
    y[dst] = a.data[src]
    out = Tensor(y, requires_grad=a.requires_grad)

    def bw(g):
        gx = np.zeros_like(g)
        gx[src] = g[dst]
        _accumulate(a, gx)

    _record(out, bw)
    return out


# ---------------------------------------------------------------------------
# losses

def cross_entropy_logits(logits, labels):
    """Mean negative log-likelihood from logits, fused log-sum-exp form.

    labels are 1..C class indices (0 is reserved for unlabeled pixels).
    """
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects (B, C) logits, got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 1 or labels.max() > c:
        raise ValueError(f"labels must lie in 1..{c}")
    idx = labels.astype(np.int64) - 1
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(denom)
    loss = -logp[np.arange(n), idx].mean()
    out = Tensor(np.asarray(loss, dtype=z.dtype), requires_grad=logits.requires_grad)
    probs = e / denom

    def bw(g):
        gz = probs.copy()
        gz[np.arange(n), idx] -= 1.0
        _accumulate(logits, gz * (g / n))

    _record(out, bw)
    return out


def cross_entropy(probabilities, labels, clamp=1e-12):
    """Mean -log p[true] from probability rows (rows must sum to 1)."""
    labels = np.asarray(labels)
    if probabilities.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, C) probabilities, got {probabilities.shape}")
    n, c = probabilities.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 1 or labels.max() > c:
        raise ValueError(f"labels must lie in 1..{c}")
    idx = labels.astype(np.int64) - 1
    p_true = probabilities.data[np.arange(n), idx]
    clamped = np.maximum(p_true, clamp)
    loss = -np.log(clamped).mean()
    out = Tensor(np.asarray(loss, dtype=probabilities.data.dtype),
                 requires_grad=probabilities.requires_grad)
    live = p_true >= clamp

    def bw(g):
        gp = np.zeros_like(probabilities.data)
        gp[np.arange(n), idx] = np.where(live, -1.0 / (clamped * n), 0.0)
        _accumulate(probabilities, gp * g)

    _record(out, bw)
    return out
