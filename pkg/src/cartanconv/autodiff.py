"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a contiguous numpy
array, every operation records its parents and a backward closure, and
``Tensor.backward`` replays the recording in reverse topological order.
The recording is rebuilt on every forward pass and dropped after the
backward sweep; there is no support for higher-order derivatives.

Broadcasting is restricted to full-shape and scalar operands.  The one
escape hatch is :func:`broadcast_to`, whose backward rule sums over the
expanded axes; bias terms and similar per-axis parameters go through it
explicitly.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DimensionError

Array = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A dense float64 array plus an optional gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple["Tensor", ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None

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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: Array | None = None) -> None:
        """Propagate gradients from this node to every recorded leaf."""
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = _as_array(seed)
            if seed.shape != self.data.shape:
                raise DimensionError(
                    f"backward seed shape {seed.shape} != tensor shape {self.data.shape}"
                )
        order = tape(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = seed.copy()
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def tape(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root`` in topological order.

    Every node's parents appear before the node itself; leaves come first.
    """
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: Array, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
        out.op = op
    return out


def _accumulate(t: Tensor, g: Array) -> None:
    if t.requires_grad and t.grad is not None:
        t.grad += g


def _is_scalar(t: Tensor) -> bool:
    return t.size == 1


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: Array, t: Tensor) -> Array:
    if g.shape == t.shape:
        return g
    return np.sum(g).reshape(t.shape)  # scalar operand


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "add")
    out_data = a.data + b.data

    def backward(g: Array) -> None:
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(g, b))

    return _record(out_data, (a, b), backward, "add")


def neg(a) -> Tensor:
    a = _coerce(a)

    def backward(g: Array) -> None:
        _accumulate(a, -g)

    return _record(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_elementwise(a, b, "mul")
    out_data = a.data * b.data

    def backward(g: Array) -> None:
        _accumulate(a, _reduce_to(g * b.data, a))
        _accumulate(b, _reduce_to(g * a.data, b))

    return _record(out_data, (a, b), backward, "mul")


def scale(a, factor: float) -> Tensor:
    a = _coerce(a)
    factor = float(factor)

    def backward(g: Array) -> None:
        _accumulate(a, factor * g)

    return _record(a.data * factor, (a,), backward, "scale")


def sin(a, omega: float = 1.0) -> Tensor:
    """sin(omega * x); omega is the fixed frequency multiplier."""
    a = _coerce(a)
    omega = float(omega)
    scaled = omega * a.data

    def backward(g: Array) -> None:
        _accumulate(a, g * omega * np.cos(scaled))

    return _record(np.sin(scaled), (a,), backward, "sin")


def gelu(a) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF (no tanh approximation)."""
    a = _coerce(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))

    def backward(g: Array) -> None:
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        _accumulate(a, g * (cdf + a.data * pdf))

    return _record(a.data * cdf, (a,), backward, "gelu")


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _record(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)

    def backward(g: Array) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _record(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: Array) -> None:
        _accumulate(a, np.transpose(g, inverse))

    return _record(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), backward, "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    try:
        out_data = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim
    summed_axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(a.shape) if n == 1 and shape[lead + i] != 1
    )

    def backward(g: Array) -> None:
        if summed_axes:
            g = g.sum(axis=summed_axes, keepdims=False)
        _accumulate(a, g.reshape(a.shape))

    return _record(out_data.copy(), (a,), backward, "broadcast_to")


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g: Array) -> None:
        if not keepdims:
            expand = list(a.shape)
            for ax in axes:
                expand[ax] = 1
            g = g.reshape(expand)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _record(out_data, (a,), backward, "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    axes = _normalize_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g: Array) -> None:
        if not keepdims:
            expand = list(a.shape)
            for ax in axes:
                expand[ax] = 1
            g = g.reshape(expand)
        _accumulate(a, np.broadcast_to(g, a.shape) / count)

    return _record(out_data, (a,), backward, "mean")


LAYER_NORM_EPS = 1e-5


def layer_norm(x, gamma, beta, axes) -> Tensor:
    """Zero-mean unit-variance over ``axes`` (eps=1e-5), then affine.

    ``gamma`` and ``beta`` have the shape of the normalized axes; they are
    broadcast over the remaining axes.
    """
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    axes = _normalize_axes(axes, x.ndim)
    if not axes:
        raise DimensionError("layer_norm: empty normalization axis set")
    expected = tuple(x.shape[ax] for ax in axes)
    if gamma.shape != expected or beta.shape != expected:
        raise DimensionError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} "
            f"do not match normalized axes {expected}"
        )
    bshape = tuple(x.shape[i] if i in axes else 1 for i in range(x.ndim))
    gamma_b = gamma.data.reshape(bshape)
    beta_b = beta.data.reshape(bshape)

    mu = x.data.mean(axis=axes, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (x.data - mu) * inv
    out_data = xhat * gamma_b + beta_b

    reduce_axes = tuple(i for i in range(x.ndim) if i not in axes)

    def backward(g: Array) -> None:
        if x.requires_grad:
            gxh = g * gamma_b
            m1 = gxh.mean(axis=axes, keepdims=True)
            m2 = (gxh * xhat).mean(axis=axes, keepdims=True)
            _accumulate(x, inv * (gxh - m1 - xhat * m2))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=reduce_axes).reshape(gamma.shape))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=reduce_axes).reshape(beta.shape))

    return _record(out_data, (x, gamma, beta), backward, "layer_norm")


# -- discrete cross-correlation ------------------------------------------

_COL_CHUNK_BYTES = 192 * 2**20  # keep im2col buffers comfortably in memory


def _pad_hw(x: Array, ph: int, pw: int, value: float = 0.0) -> Array:
    if ph == 0 and pw == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(x, pad, mode="constant", constant_values=value)


def _correlate(x: Array, k: Array) -> Array:
    """Valid cross-correlation of x[B,C,H,W] with k[O,C,kh,kw] -> [B,O,H',W']."""
    b, c, h, w = x.shape
    o, _, kh, kw = k.shape
    oh, ow = h - kh + 1, w - kw + 1
    kmat = k.reshape(o, c * kh * kw).T
    out = np.empty((b, o, oh, ow))
    row_bytes = c * kh * kw * 8
    chunk = max(1, int(_COL_CHUNK_BYTES // max(1, oh * ow * row_bytes)))
    for start in range(0, b, chunk):
        stop = min(b, start + chunk)
        windows = np.lib.stride_tricks.sliding_window_view(x[start:stop], (kh, kw), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape((stop - start) * oh * ow, c * kh * kw)
        out[start:stop] = (cols @ kmat).reshape(stop - start, oh, ow, o).transpose(0, 3, 1, 2)
    return out


def _conv2d_shapes(x_shape, k_shape, padding: str):
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise DimensionError(f"conv2d expects 4-D input/kernel, got {x_shape} and {k_shape}")
    _, cin, h, w = x_shape
    _, kcin, kh, kw = k_shape
    if cin != kcin:
        raise DimensionError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise DimensionError(f"conv2d: unknown padding {padding!r}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    return ph, pw


def conv2d(x, k, padding: str = "same") -> Tensor:
    """Discrete cross-correlation of x[B,Cin,H,W] with k[Cout,Cin,kh,kw]."""
    x, k = _coerce(x), _coerce(k)
    ph, pw = _conv2d_shapes(x.shape, k.shape, padding)
    out_data = _correlate(_pad_hw(x.data, ph, pw), k.data)
    kh, kw = k.shape[2], k.shape[3]

    def backward(g: Array) -> None:
        if x.requires_grad:
            # full correlation of g with the spatially flipped, channel-swapped kernel
            kt = np.ascontiguousarray(k.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx_full = _correlate(_pad_hw(g, kh - 1, kw - 1), kt)
            if ph or pw:
                h, w = x.shape[2], x.shape[3]
                gx_full = gx_full[:, :, ph : ph + h, pw : pw + w]
            _accumulate(x, gx_full)
        if k.requires_grad:
            xp = _pad_hw(x.data, ph, pw)
            b = x.shape[0]
            gk = np.zeros_like(k.data)
            oh, ow = g.shape[2], g.shape[3]
            row_bytes = x.shape[1] * kh * kw * 8
            chunk = max(1, int(_COL_CHUNK_BYTES // max(1, oh * ow * row_bytes)))
            for start in range(0, b, chunk):
                stop = min(b, start + chunk)
                windows = np.lib.stride_tricks.sliding_window_view(xp[start:stop], (kh, kw), axis=(2, 3))
                cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(
                    (stop - start) * oh * ow, x.shape[1] * kh * kw
                )
                gmat = g[start:stop].transpose(0, 2, 3, 1).reshape((stop - start) * oh * ow, -1)
                gk += (gmat.T @ cols).reshape(k.shape)
            _accumulate(k, gk)

    return _record(out_data, (x, k), backward, "conv2d")


def max_pool2d(x, window: int = 2) -> Tensor:
    """Per-window maximum over the last two axes; odd remainders padded with -inf.

    Gradient routes to the argmax; ties go to the first index in row-major
    window order.
    """
    x = _coerce(x)
    if x.ndim < 2:
        raise DimensionError("max_pool2d expects at least 2 dims")
    h, w = x.shape[-2], x.shape[-1]
    ph = (-h) % window
    pw = (-w) % window
    xp = x.data
    if ph or pw:
        pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        xp = np.pad(xp, pad, mode="constant", constant_values=-np.inf)
    hp, wp = h + ph, w + pw
    lead = x.shape[:-2]
    blocks = xp.reshape(*lead, hp // window, window, wp // window, window)
    blocks = np.moveaxis(blocks, -3, -2)  # [..., H2, W2, window, window]
    flat = blocks.reshape(*lead, hp // window, wp // window, window * window)
    arg = flat.argmax(axis=-1)
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g: Array) -> None:
        if not x.requires_grad:
            return
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gblocks = gflat.reshape(*lead, hp // window, wp // window, window, window)
        gfull = np.moveaxis(gblocks, -2, -3).reshape(*lead, hp, wp)
        _accumulate(x, gfull[..., :h, :w])

    return _record(out_data, (x,), backward, "max_pool2d")


def log_softmax(logits) -> Tensor:
    logits = _coerce(logits)
    if logits.ndim != 2:
        raise DimensionError(f"log_softmax expects [batch, classes], got {logits.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse

    def backward(g: Array) -> None:
        softmax = np.exp(out_data)
        _accumulate(logits, g - softmax * g.sum(axis=1, keepdims=True))

    return _record(out_data, (logits,), backward, "log_softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of logits[B,K] against integer labels[B]."""
    logits = _coerce(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy: logits {logits.shape} incompatible with labels {labels.shape}"
        )
    b, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise DimensionError("cross_entropy: label out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out_data = np.asarray(-logp[np.arange(b), labels].mean())

    def backward(g: Array) -> None:
        grad = np.exp(logp)
        grad[np.arange(b), labels] -= 1.0
        _accumulate(logits, grad * (float(g) / b))

    return _record(out_data, (logits,), backward, "cross_entropy")


# -- Adam -----------------------------------------------------------------


class Adam:
    """Adam with bias correction; skips parameters whose gradient is non-finite.

    ``step`` returns the number of skipped parameters so the training loop
    can report the fault.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = [0] * len(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> int:
        skipped = 0
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                skipped += 1
                continue
            self.t[i] += 1
            adam_step(p.data, g, self.m[i], self.v[i], self.t[i],
                      self.lr, self.beta1, self.beta2, self.eps)
        return skipped


def adam_step(param: Array, grad: Array, m: Array, v: Array, t: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction (t counts from 1)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


# -- finite-difference checking -------------------------------------------


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> Array:
    """Central-difference gradient of the scalar ``fn()`` w.r.t. ``x.data``."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = float(fn().data)
        flat[i] = orig - step
        fm = float(fn().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
              step: float = 1e-5) -> float:
    """Worst relative error between recorded and finite-difference gradients.

    ``fn`` must rebuild the graph from ``tensors`` on each call and return a
    scalar. Relative error is measured against the larger gradient magnitude
    with a unit floor, so zero gradients compare absolutely.
    """
    out = fn()
    if out.size != 1:
        raise DimensionError("gradcheck expects a scalar objective")
    for t in tensors:
        t.zero_grad()
    out.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(fn, t, step=step)
        denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1.0)
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0) / denom))
    return worst


def directional_derivative(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                           directions: Sequence[Array], step: float = 1e-6) -> tuple[float, float]:
    """(recorded, finite-difference) directional derivative along ``directions``."""
    out = fn()
    for t in tensors:
        t.zero_grad()
    out.backward()
    recorded = 0.0
    for t, d in zip(tensors, directions):
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        recorded += float(np.sum(g * d))
    saved = [t.data.copy() for t in tensors]
    for t, d in zip(tensors, directions):
        t.data += step * d
    fp = float(fn().data)
    for t, s, d in zip(tensors, saved, directions):
        t.data = s - step * d
    fm = float(fn().data)
    for t, s in zip(tensors, saved):
        t.data = s
    return recorded, (fp - fm) / (2.0 * step)
