"""Minimal reverse-mode autodiff over numpy arrays.

Small static networks only: dense layers, 1-d convolutions, the usual
pointwise nonlinearities, and a handful of fused losses. Everything is
float32 by default; tests may build float64 graphs (pass float64 arrays)
for finite-difference checks, the ops follow input dtype.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager: skip graph construction (rollout fast path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

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

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
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
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in node._vjp(node.grad):
                if parent.requires_grad or parent._parents:
                    if parent.grad is None:
                        parent.grad = g.astype(parent.data.dtype, copy=False)
                    else:
                        parent.grad = parent.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data + other.data, (self, other))
        if out._parents:
            out._vjp = lambda g: ((self, _unbroadcast(g, self.shape)),
                                  (other, _unbroadcast(g, other.shape)))
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data * other.data, (self, other))
        if out._parents:
            out._vjp = lambda g: ((self, _unbroadcast(g * other.data, self.shape)),
                                  (other, _unbroadcast(g * self.data, other.shape)))
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out._parents:
            out._vjp = lambda g: ((self, -g),)
        return out

    def __sub__(self, other):
        return self + (-_wrap(other, self.dtype))

    def __rsub__(self, other):
        return _wrap(other, self.dtype) + (-self)

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        out = _make(self.data / other.data, (self, other))
        if out._parents:
            out._vjp = lambda g: ((self, _unbroadcast(g / other.data, self.shape)),
                                  (other, _unbroadcast(-g * self.data / (other.data ** 2), other.shape)))
        return out

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) / self

    def __pow__(self, p):
        assert isinstance(p, (int, float))
        out = _make(self.data ** p, (self,))
        if out._parents:
            out._vjp = lambda g: ((self, g * p * self.data ** (p - 1)),)
        return out

    def __matmul__(self, other):
        assert isinstance(other, Tensor)
        out = _make(self.data @ other.data, (self, other))
        if out._parents:
            def vjp(g):
                ga = g @ other.data.T if other.data.ndim == 2 else np.outer(g, other.data)
                gb = self.data.T @ g
                return ((self, ga), (other, gb))
            out._vjp = vjp
        return out

    def __getitem__(self, key):
        out = _make(self.data[key], (self,))
        if out._parents:
            def vjp(g):
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                return ((self, full),)
            out._vjp = vjp
        return out

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _make(self.data.reshape(shape), (self,))
        if out._parents:
            out._vjp = lambda g: ((self, g.reshape(self.shape)),)
        return out

    def transpose(self, *axes):
        ax = axes if axes else None
        out = _make(np.transpose(self.data, ax), (self,))
        if out._parents:
            inv = np.argsort(ax) if ax else None
            out._vjp = lambda g: ((self, np.transpose(g, inv)),)
        return out

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _make(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            def vjp(g):
                if axis is None:
                    return ((self, np.broadcast_to(g, self.shape).copy()),)
                gg = g if keepdims else np.expand_dims(g, axis)
                return ((self, np.broadcast_to(gg, self.shape).copy()),)
            out._vjp = vjp
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else (
            np.prod([self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents) -> Tensor:
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        return Tensor(data, _parents=tuple(parents))
    return Tensor(data)


def param(data, dtype=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype or DTYPE), requires_grad=True)


# -- pointwise ---------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = _make(np.maximum(x.data, 0), (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * (x.data > 0)),)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _make(y, (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * (1.0 - y * y)),)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = _make(y, (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * y * (1.0 - y)),)
    return out


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = _make(y, (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * y),)
    return out


def log(x: Tensor) -> Tensor:
    out = _make(np.log(x.data), (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g / x.data),)
    return out


def softplus(x: Tensor) -> Tensor:
    # stable: max(x,0) + log1p(exp(-|x|))
    y = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))
    out = _make(y, (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g / (1.0 + np.exp(-x.data))),)
    return out


def square(x: Tensor) -> Tensor:
    return x * x


def absolute(x: Tensor) -> Tensor:
    out = _make(np.abs(x.data), (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * np.sign(x.data)),)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Value clip; gradient passes only inside [lo, hi]."""
    out = _make(np.clip(x.data, lo, hi), (x,))
    if out._parents:
        mask = (x.data >= lo) & (x.data <= hi)
        out._vjp = lambda g: ((x, g * mask),)
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; subgradient follows the selected branch."""
    return where(a.data <= b.data, a, b)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """cond is a constant boolean array."""
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b))
    out = _make(np.where(cond, a.data, b.data), (a, b))
    if out._parents:
        out._vjp = lambda g: ((a, _unbroadcast(g * cond, a.shape)),
                              (b, _unbroadcast(g * (~cond), b.shape)))
    return out


def concat(parts: list, axis: int = -1) -> Tensor:
    datas = [p.data for p in parts]
    out = _make(np.concatenate(datas, axis=axis), tuple(parts))
    if out._parents:
        sizes = [d.shape[axis] for d in datas]
        splits = np.cumsum(sizes)[:-1]
        def vjp(g):
            gs = np.split(g, splits, axis=axis)
            return tuple((p, gi) for p, gi in zip(parts, gs))
        out._vjp = vjp
    return out


# -- structured ops ----------------------------------------------------


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    out = _make(table.data[idx], (table,))
    if out._parents:
        def vjp(g):
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            return ((table, full),)
        out._vjp = vjp
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """x: (B, Cin, L); w: (Cout, Cin, K); b: (Cout,). Returns (B, Cout, Lo)."""
    B, Cin, L = x.data.shape
    Cout, _, K = w.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    Lp = xp.shape[2]
    Lo = (Lp - K) // stride + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]
    # (B, Cin, Lo, K) -> (B*Lo, Cin*K)
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(B * Lo, Cin * K)
    wf = w.data.reshape(Cout, Cin * K)
    y = (cols2 @ wf.T).reshape(B, Lo, Cout).transpose(0, 2, 1) + b.data[None, :, None]
    out = _make(np.ascontiguousarray(y), (x, w, b))
    if out._parents:
        def vjp(g):
            gf = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * Lo, Cout)
            gw = (gf.T @ cols2).reshape(Cout, Cin, K)
            gb = gf.sum(axis=0)
            gcols = (gf @ wf).reshape(B, Lo, Cin, K).transpose(0, 2, 1, 3)
            gx = _col2im(gcols, B, Cin, Lp, K, stride)
            if pad:
                gx = gx[:, :, pad:Lp - pad]
            return ((x, gx), (w, gw), (b, gb))
        out._vjp = vjp
    return out


def _col2im(gcols: np.ndarray, B: int, C: int, Lp: int, K: int, stride: int) -> np.ndarray:
    from .. import _kernels
    return _kernels.col2im_1d(np.ascontiguousarray(gcols), Lp, stride)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsample along the last axis of (B, C, L)."""
    out = _make(np.repeat(x.data, 2, axis=2), (x,))
    if out._parents:
        B, C, L = x.data.shape
        out._vjp = lambda g: ((x, g.reshape(B, C, L, 2).sum(axis=3)),)
    return out


# -- fused losses ------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, target: np.ndarray, axis: int = 1) -> Tensor:
    """Mean CE over all positions. target: int array matching logits minus `axis`."""
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=axis, keepdims=True)
    tgt = np.expand_dims(target, axis)
    logp = z - np.log(ez.sum(axis=axis, keepdims=True))
    nll = -np.take_along_axis(logp, tgt, axis=axis)
    out = _make(np.asarray(nll.mean(), dtype=logits.dtype), (logits,))
    if out._parents:
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, tgt, 1.0, axis=axis)
        n = nll.size
        out._vjp = lambda g: ((logits, g * (p - onehot) / n),)
    return out


def bce_with_logits(logit: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; target in {0,1}."""
    x = logit.data
    loss = np.maximum(x, 0) - x * target + np.log1p(np.exp(-np.abs(x)))
    out = _make(np.asarray(loss.mean(), dtype=logit.dtype), (logit,))
    if out._parents:
        p = 1.0 / (1.0 + np.exp(-x))
        out._vjp = lambda g: ((logit, g * (p - target) / x.size),)
    return out


def lgamma(x: Tensor) -> Tensor:
    from scipy.special import gammaln, digamma
    out = _make(gammaln(x.data).astype(x.dtype), (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * digamma(x.data).astype(x.dtype)),)
    return out


def digamma(x: Tensor) -> Tensor:
    from scipy.special import digamma as _dg, polygamma
    out = _make(_dg(x.data).astype(x.dtype), (x,))
    if out._parents:
        out._vjp = lambda g: ((x, g * polygamma(1, x.data).astype(x.dtype)),)
    return out


# -- layers ------------------------------------------------------------


class Module:
    """Tiny parameter registry: named_params() walks attributes recursively."""

    def named_params(self, prefix: str = ""):
        out = []
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((key, val))
            elif isinstance(val, Module):
                out.extend(val.named_params(prefix=f"{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_params(prefix=f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out.append((f"{key}.{i}", item))
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_params()}

    def load_state_dict(self, state: dict):
        own = dict(self.named_params())
        missing = set(own) ^ set(state)
        if missing:
            raise KeyError(f"state mismatch: {sorted(missing)}")
        for k, v in own.items():
            arr = np.asarray(state[k], dtype=v.data.dtype)
            if arr.shape != v.data.shape:
                raise ValueError(f"shape mismatch at {k}: {arr.shape} vs {v.data.shape}")
            v.data = arr.copy()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero_init: bool = False):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.w = param(w)
        self.b = param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class MLP(Module):
    """Dense ReLU stack; linear final layer."""

    def __init__(self, dims: list, rng: np.random.Generator, zero_last: bool = False):
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, zero_init=(zero_last and i == len(dims) - 2))
            for i in range(len(dims) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0):
        scale = np.sqrt(2.0 / (cin * k))
        self.w = param(rng.normal(0.0, scale, size=(cout, cin, k)))
        self.b = param(np.zeros(cout))
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Adam:
    def __init__(self, params: list, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * (g * g)
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
