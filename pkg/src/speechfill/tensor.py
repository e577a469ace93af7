"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array in the project flows through this module: parameters, activations
and losses are `Tensor`s, ops record themselves on a tape-like graph whenever
an input requires gradients, and `backward` walks the graph once and then
frees it. Gradients are retained on leaf tensors only.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's shape rule."""


def _shape_err(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference / benchmarking)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense 64-bit float array, optionally tracked on the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

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

    def detach(self) -> "Tensor":
        """A leaf tensor sharing this tensor's values, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def abs(self):
        return abs_(self)

    # -- backward ----------------------------------------------------------
    def backward(self):
        """Populate `.grad` of every requires-grad leaf ancestor of `self`.

        `self` must be a scalar (shape ()). The graph is freed afterwards.
        """
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            elif node.requires_grad:
                # leaf: accumulate into .grad
                node.grad = g.copy() if node.grad is None else node.grad + g
            # free the tape as we go
            node._parents = ()
            node._backward = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / linear algebra primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_err("add", a.shape, b.shape) from None
    return _track(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_err("sub", a.shape, b.shape) from None
    return _track(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_err("mul", a.shape, b.shape) from None
    return _track(data, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.shape),
        _unbroadcast(g * a.data, b.shape),
    ))


def scale(a: Tensor, s: float) -> Tensor:
    return _track(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading (batch) axes broadcast, both operands ndim >= 2."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_err("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise _shape_err("matmul", a.shape, b.shape) from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _track(data, (a, b), back)


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); the subgradient at a == c is taken as 0."""
    data = np.maximum(a.data, c)
    mask = a.data > c
    return _track(data, (a,), lambda g: (g * mask,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)  # sign(0) == 0, matching the L1 subgradient choice
    return _track(np.abs(a.data), (a,), lambda g: (g * sign,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _track(data, (a,), back)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return _track(data, (a,), back)


def mean_abs_error(a: Tensor, b: Tensor) -> Tensor:
    """Mean |a - b| over every element (composition of sub, abs, mean)."""
    if a.shape != b.shape:
        raise _shape_err("mean_abs_error", a.shape, b.shape)
    return mean_(abs_(sub(a, b)))


# ---------------------------------------------------------------------------
# nonlinearities / normalization
# ---------------------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _track(y, (a,), back)


def elu(a: Tensor) -> Tensor:
    """ELU with alpha = 1."""
    neg = np.expm1(np.minimum(a.data, 0.0))
    y = np.where(a.data > 0, a.data, neg)
    dy = np.where(a.data > 0, 1.0, neg + 1.0)
    return _track(y, (a,), lambda g: (g * dy,))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT2))
    y = a.data * cdf
    pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
    dy = cdf + a.data * pdf
    return _track(y, (a,), lambda g: (g * dy,))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then apply per-feature gain and bias."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise _shape_err("layer_norm", a.shape, gain.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    y = xhat * gain.data + bias.data

    def back(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _track(y, (a, gain, bias), back)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _track(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    data = a.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)
    return _track(data, (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    data = np.broadcast_to(a.data, shape)
    return _track(data, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _track(data, tuple(tensors), back)


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; gradient is zero-padded back."""
    data = a.data[key]

    def back(g):
        full = np.zeros(a.shape, dtype=np.float64)
        full[key] = g
        return (full,)

    return _track(data.copy(), (a,), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    data = table.data[ids]

    def back(g):
        gt = np.zeros(table.shape, dtype=np.float64)
        np.add.at(gt, ids, g)
        return (gt,)

    return _track(data, (table,), back)


# ---------------------------------------------------------------------------
# 2-D strided convolution (NCHW)
# ---------------------------------------------------------------------------

def _same_pad(size: int, k: int, s: int) -> tuple[int, int]:
    out = -(-size // s)  # ceil
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride=(1, 1), padding: str = "same") -> Tensor:
    """Strided 2-D convolution of x (B, C, H, W) with kernel (F, C, kh, kw)."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise _shape_err("conv2d", x.shape, kernel.shape)
    fout, cin, kh, kw = kernel.shape
    if bias.shape != (fout,):
        raise _shape_err("conv2d bias", bias.shape, (fout,))
    sh, sw = stride
    b, _, h, w = x.shape
    if padding == "same":
        (pt, pb), (pl, pr) = _same_pad(h, kh, sh), _same_pad(w, kw, sw)
    elif padding == "valid":
        (pt, pb), (pl, pr) = (0, 0), (0, 0)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise _shape_err("conv2d", x.shape, kernel.shape)

    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]                       # (B, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, cin * kh * kw)
    wmat = kernel.data.reshape(fout, cin * kh * kw).T
    out = np.matmul(cols, wmat) + bias.data           # (B, Ho, Wo, F)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def back(g):
        gl = g.transpose(0, 2, 3, 1)                  # (B, Ho, Wo, F)
        dw = np.matmul(cols.reshape(-1, cin * kh * kw).T, gl.reshape(-1, fout))
        dkernel = dw.T.reshape(kernel.shape)
        dbias = gl.reshape(-1, fout).sum(axis=0)
        dcols = np.matmul(gl, wmat.T)                 # (B, Ho, Wo, C*kh*kw)
        dcols = dcols.reshape(b, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + ho * sh:sh, j:j + wo * sw:sw] += dcols[:, :, i, j]
        dx = dxp[:, :, pt:pt + h, pl:pl + w]
        return dx, dkernel, dbias

    return _track(out, (x, kernel, bias), back)


# ---------------------------------------------------------------------------
# gradient checking oracle
# ---------------------------------------------------------------------------

def grad_check(fn, inputs: list[Tensor], h: float = 1e-5) -> float:
    """Compare analytic gradients of scalar fn(*inputs) to central differences.

    Returns the max over all input components of
    |analytic - numeric| / max(1, |numeric|). Non-finite values are reported
    via ArithmeticError rather than clamped.
    """
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = fn(*inputs)
    if not np.isfinite(out.data).all():
        raise ArithmeticError("non-finite forward value in grad_check")
    out.backward()

    worst = 0.0
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        a_flat = np.asarray(analytic, dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*inputs).data
            flat[i] = orig - h
            fm = fn(*inputs).data
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ArithmeticError(f"non-finite intermediate at component {i}")
            numeric = (fp - fm) / (2.0 * h)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    """Adam with bias-corrected moments over a named parameter dict.

    A step whose gradients contain any NaN is rejected: parameters and
    moments stay untouched and `skipped` is incremented.
    """

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    skipped: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], lr: float | None = None) -> bool:
        lr = self.learning_rate if lr is None else lr
        grads = {}
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            if np.isnan(g).any():
                self.skipped += 1
                return False
            grads[name] = g

        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = np.zeros(p.shape)
                self.m[name] = m
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
        return True


def zero_grads(params: dict[str, Tensor]):
    for p in params.values():
        p.grad = None


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    x = rng.standard_normal(shape) * std
    lim = 2.0 * std
    bad = np.abs(x) > lim
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > lim
    return x
