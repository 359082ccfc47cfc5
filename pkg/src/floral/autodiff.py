"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors carry float64 (or complex128, internally) values and build a tape of
parent links; ``backward`` on a scalar walks the tape in reverse topological
order and accumulates gradients additively until ``zero_grad``.

Complex arrays appear only inside the spectral convolution primitive; its
parameters are stored as real arrays with a trailing (real, imag) axis, so
every parameter gradient is real and optimizer-ready.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (inference / ODE sampling)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None, name=""):
        values = np.asarray(values)
        if values.dtype != np.complex128:
            values = values.astype(np.float64, copy=False)
        self.values = values
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if _grad_enabled else ()
        self._backward = _backward if _grad_enabled else None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, delta):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += delta

    def backward(self):
        if self.values.shape != ():
            raise ValueError("backward requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.asarray(1.0))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.values + b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.values.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.values * b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    out._backward = backward
    return out


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values * c, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    out._backward = backward
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values * a.values, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(2.0 * a.values * g)

    out._backward = backward
    return out


def silu(a) -> Tensor:
    a = as_tensor(a)
    sig = expit(a.values)
    out = Tensor(a.values * sig, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * sig * (1.0 + a.values * (1.0 - sig)))

    out._backward = backward
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.values.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.values.shape).copy())

    out._backward = backward
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else np.prod(
        [a.values.shape[ax] for ax in np.atleast_1d(axis)]
    )
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.reshape(shape), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.values.shape))

    out._backward = backward
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    out._backward = backward
    return out


def linear_channels(x, weight, bias=None) -> Tensor:
    """Pointwise (1x1) channel mixing: y[b,o,...] = sum_i W[o,i] x[b,i,...] + b[o]."""
    x, weight = as_tensor(x), as_tensor(weight)
    b, ci = x.values.shape[:2]
    spatial = x.values.shape[2:]
    co = weight.values.shape[0]
    xm = x.values.reshape(b, ci, -1)
    y = np.matmul(weight.values, xm).reshape((b, co) + spatial)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.values.reshape((1, -1) + (1,) * (y.ndim - 2))
        parents = parents + (bias,)
    out = Tensor(y, _parents=parents)

    def backward(g):
        gm = g.reshape(b, co, -1)
        if x.requires_grad:
            x._accumulate(np.matmul(weight.values.T, gm).reshape(x.values.shape))
        if weight.requires_grad:
            weight._accumulate(np.matmul(gm, xm.transpose(0, 2, 1)).sum(axis=0))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0,) + tuple(range(2, g.ndim))))

    out._backward = backward
    return out


def dense(x, weight, bias=None) -> Tensor:
    """Affine map on feature vectors: y = x @ W.T + b for x of shape (batch, fin)."""
    x, weight = as_tensor(x), as_tensor(weight)
    y = x.values @ weight.values.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.values
        parents = parents + (bias,)
    out = Tensor(y, _parents=parents)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.values)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.values)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Spectral convolution primitive.

def _mode_indices(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(grid fft indices, weight slot indices) for the retained frequency set.

    Weight slots are laid out in fft order of a virtual grid of size 2m-1:
    slots 0..m-1 hold frequencies 0..m-1 and slots m..2m-2 hold frequencies
    -(m-1)..-1.  On an n-point grid only frequencies below the Nyquist mode
    are retained so the same slots apply at every resolution.
    """
    m_eff = min(m, (n + 1) // 2)
    pos = np.arange(m_eff)
    neg = -np.arange(m_eff - 1, 0, -1)
    freqs = np.concatenate([pos, neg])
    grid_idx = freqs % n
    slot_idx = np.concatenate([pos, freqs[m_eff:] + (2 * m - 1)])
    return grid_idx.astype(int), slot_idx.astype(int)


def spectral_conv(x, weight, modes) -> Tensor:
    """FFT, complex channel mixing on retained low modes, inverse FFT.

    ``x`` is real with shape (batch, in_ch, *spatial); ``weight`` is real with
    shape (in_ch, out_ch, *(2m-1 per axis), 2), the trailing axis holding
    (real, imag) parts.  Output has out_ch channels on the same grid.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    spatial = x.values.shape[2:]
    modes = tuple(int(m) for m in modes)
    if len(modes) != len(spatial):
        raise ValueError("modes rank does not match spatial rank")
    in_ch, out_ch = weight.values.shape[0], weight.values.shape[1]
    if x.values.shape[1] != in_ch:
        raise ValueError(
            f"channel mismatch: input has {x.values.shape[1]}, weights expect {in_ch}"
        )
    axes = tuple(range(2, 2 + len(spatial)))
    grid_idx, slot_idx = zip(*(_mode_indices(n, m) for n, m in zip(spatial, modes)))
    gather = np.ix_(*grid_idx)
    slots = np.ix_(*slot_idx)
    w_complex = weight.values[..., 0] + 1j * weight.values[..., 1]
    w_active = w_complex[(slice(None), slice(None)) + slots]

    batch = x.values.shape[0]
    n_active = tuple(len(idx) for idx in grid_idx)
    k_active = int(np.prod(n_active))
    # Channel mixing as one batched GEMM per retained mode: (K, B, Ci) @ (K, Ci, Co).
    wm = w_active.reshape(in_ch, out_ch, k_active).transpose(2, 0, 1)

    x_hat = np.fft.fftn(x.values, axes=axes)
    x_act = x_hat[(slice(None), slice(None)) + gather]
    xm = np.ascontiguousarray(x_act.reshape(batch, in_ch, k_active).transpose(2, 0, 1))
    y_act = np.matmul(xm, wm).transpose(1, 2, 0).reshape((batch, out_ch) + n_active)
    y_hat = np.zeros((batch, out_ch) + spatial, dtype=np.complex128)
    y_hat[(slice(None), slice(None)) + gather] = y_act
    n_total = float(np.prod(spatial))
    out = Tensor(np.fft.ifftn(y_hat, axes=axes).real, _parents=(x, weight))

    def backward(g):
        # Adjoint of Re(ifftn(.)) is fftn(.)/N on the complex side.
        g_hat = np.fft.fftn(g, axes=axes) / n_total
        g_act = g_hat[(slice(None), slice(None)) + gather]
        gm = np.ascontiguousarray(
            g_act.reshape(batch, out_ch, k_active).transpose(2, 0, 1))
        if weight.requires_grad:
            w_bar = np.matmul(np.conj(xm).transpose(0, 2, 1), gm)  # (K, Ci, Co)
            full = np.zeros(w_complex.shape, dtype=np.complex128)
            full[(slice(None), slice(None)) + slots] = (
                w_bar.transpose(1, 2, 0).reshape((in_ch, out_ch) + n_active))
            weight._accumulate(np.stack([full.real, full.imag], axis=-1))
        if x.requires_grad:
            x_bar = np.matmul(gm, np.conj(wm).transpose(0, 2, 1))  # (K, B, Ci)
            x_bar_hat = np.zeros(x_hat.shape, dtype=np.complex128)
            x_bar_hat[(slice(None), slice(None)) + gather] = (
                x_bar.transpose(1, 2, 0).reshape((batch, in_ch) + n_active))
            # Adjoint of fftn on a real input: N * ifftn, real part.
            x._accumulate((np.fft.ifftn(x_bar_hat, axes=axes) * n_total).real)

    out._backward = backward
    return out


def spectral_weight_shape(in_ch: int, out_ch: int, modes) -> tuple[int, ...]:
    return (in_ch, out_ch) + tuple(2 * int(m) - 1 for m in modes) + (2,)
