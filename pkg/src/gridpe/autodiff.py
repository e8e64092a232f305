"""Reverse-mode autodiff over numpy arrays, sized for a small transformer.

The op set is exactly what the model needs: matmul, broadcast add/mul,
softmax, layer norm, GELU, embedding lookup, dropout, pair rotation (for
rotary encodings), and cross-entropy. Training runs in float32; verification
runs in float64 simply by building float64 tensors — ops inherit the dtype of
their inputs.

Values are immutable once created within a forward pass; the tape is
single-threaded per training run.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .rng import CounterStream


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericsError(RuntimeError):
    """A non-finite value reached a place that requires finite values."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager: ops inside build no tape (for eval/decoding)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A dense array plus an optional gradient and tape hook.

    data is row-major float32/float64; grad, when present, always matches
    data's shape. All values are required to stay finite — a NaN/Inf is an
    error state, checked by callers at step granularity.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[], None] | None = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- tape ----------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded tape."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# -- elementwise and structural ops --------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            if gb is g and a.grad is g:  # never hand one buffer to two parents
                gb = g.copy()
            _accum(b, gb)

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        s = float(b)

        def backward_scalar():
            _accum(a, out.grad * s)

        out = _make(a.data * s, (a,), backward_scalar)
        return out

    a, b = _as_tensor(a), _as_tensor(b)

    def backward():
        g = out.grad
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out = _make(a.data * b.data, (a, b), backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape))

    out = _make(out_data, (a, b), backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def backward():
        _accum(x, out.grad.reshape(x.data.shape))

    out = _make(out_data, (x,), backward)
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward():
        _accum(x, out.grad.transpose(inv))

    out = _make(x.data.transpose(axes), (x,), backward)
    return out


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """x[..., start:stop] with zero-padded backward."""
    x = _as_tensor(x)

    def backward():
        g = np.zeros_like(x.data)
        g[..., start:stop] = out.grad
        _accum(x, g)

    out = _make(np.ascontiguousarray(x.data[..., start:stop]), (x,), backward)
    return out


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def backward():
        _accum(x, np.full_like(x.data, float(out.grad)))

    out = _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)
    return out


def tmean(x: Tensor) -> Tensor:
    return mul(tsum(x), 1.0 / x.data.size)


# -- neural-net ops --------------------------------------------------------------


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding index out of range [0, {table.data.shape[0]}): "
            f"[{ids.min()}, {ids.max()}]"
        )

    def backward():
        g = np.zeros_like(table.data)
        np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.data.shape[1]))
        _accum(table, g)

    out = _make(table.data[ids], (table,), backward)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`; rows sum to 1."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        g = out.grad
        y = out.data
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(x, y * (g - dot))

    out = _make(out_data, (x,), backward)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = _as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward():
        g = out.grad
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (dxhat - m1 - xhat * m2) * inv)

    out = _make(out_data, (x, gain, bias), backward)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = _as_tensor(x)
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(u)
    out_data = 0.5 * xd * (1.0 + t)

    def backward():
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        local = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du
        _accum(x, out.grad * local)

    out = _make(out_data, (x,), backward)
    return out


def dropout(x: Tensor, p: float, stream: CounterStream | None) -> Tensor:
    """Inverted dropout. stream=None or p<=0 means eval mode (identity)."""
    if stream is None or p <= 0.0:
        return x
    x = _as_tensor(x)
    keep = stream.next().random(x.data.shape) >= p
    mask = keep.astype(x.data.dtype) / (1.0 - p)
    out_data = x.data * mask

    def backward():
        _accum(x, out.grad * mask)

    out = _make(out_data, (x,), backward)
    return out


def rotate_pairs(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive (even, odd) feature pairs of x[..., T, d] by the
    angles whose cos/sin tables are (T, d/2). Norm-preserving; the backward
    pass is the inverse rotation."""
    x = _as_tensor(x)
    if x.shape[-1] % 2:
        raise ShapeError(f"rotate_pairs needs an even last dim, got {x.shape}")
    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    out_data = np.empty_like(x.data)
    out_data[..., 0::2] = xe * cos - xo * sin
    out_data[..., 1::2] = xe * sin + xo * cos

    def backward():
        g = out.grad
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        _accum(x, gx)

    out = _make(out_data, (x,), backward)
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-likelihood over rows whose target != ignore_index.

    logits: (n, vocab); targets: (n,) ints in [0, vocab) or == ignore_index.
    All targets ignored -> loss 0 with zero gradient (empty-mean convention).
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy got logits {logits.shape}, targets {targets.shape}")
    vocab = logits.shape[1]
    valid = targets != ignore_index
    checked = targets[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= vocab):
        raise IndexError(f"target outside [0, {vocab}): [{checked.min()}, {checked.max()}]")
    n_valid = int(valid.sum())

    m = logits.data.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits.data - m).sum(axis=1))
    safe_targets = np.where(valid, targets, 0)
    nll = lse - logits.data[np.arange(targets.shape[0]), safe_targets]
    value = nll[valid].mean() if n_valid else 0.0

    def backward():
        if n_valid == 0:
            _accum(logits, np.zeros_like(logits.data))
            return
        p = np.exp(logits.data - lse[:, None])
        p[np.arange(targets.shape[0]), safe_targets] -= 1.0
        p[~valid] = 0.0
        _accum(logits, (float(out.grad) / n_valid) * p)

    out = _make(np.asarray(value, dtype=logits.data.dtype), (logits,), backward)
    return out


# -- verification -----------------------------------------------------------------


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    samples_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Inputs must be float64. The relative error of element e is
    |ad - fd| / max(1, |ad|, |fd|), i.e. magnitude-scaled. When
    samples_per_tensor is set, only that many coordinates per tensor are
    probed (uniformly at random) — needed for whole-model checks.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise NumericsError("grad_check requires float64 inputs (64-bit mode)")
        t.grad = None
        t.requires_grad = True
    out = f(*inputs)
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if samples_per_tensor is None or n <= samples_per_tensor:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=samples_per_tensor, replace=False)
        for i in idx:
            keep = flat[i]
            with no_grad():
                flat[i] = keep + step
                f_plus = float(f(*inputs).data)
                flat[i] = keep - step
                f_minus = float(f(*inputs).data)
            flat[i] = keep
            fd = (f_plus - f_minus) / (2 * step)
            a = float(ad.reshape(-1)[i])
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, err)
    return worst


def assert_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NumericsError(f"non-finite values in {name}")
