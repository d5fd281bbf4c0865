"""Dense float64 tensors with a recording tape for reverse-mode gradients.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient. Complex quantities travel as (real, imag) pairs.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


_TAPES: list = []


def active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, node={self.node})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations. Use as a context manager."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out: Tensor, parents, vjp):
        out.node = len(self.nodes)
        self.nodes.append((out, parents, vjp))

    def backward(self, loss: Tensor, params) -> dict:
        """Gradients of scalar ``loss`` for each tensor in ``params``.

        ``params`` is a dict name -> Tensor or an iterable of tensors; the
        result mirrors it. Unreachable parameters get exact zeros.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, parents, vjp in reversed(self.nodes):
            g = grads.get(id(out))
            if g is None:
                continue
            if out.node is not None:
                del grads[id(out)]
            pgrads = vjp(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        if isinstance(params, dict):
            return {k: _leaf_grad(grads, t) for k, t in params.items()}
        return [_leaf_grad(grads, t) for t in params]


def _leaf_grad(grads, t):
    g = grads.get(id(t))
    return np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)


def _make(data, parents, vjp) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(out, (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis), 1.0 / n)


def take(x, idx) -> Tensor:
    x = as_tensor(x)

    basic = isinstance(idx, (int, slice)) or (
        isinstance(idx, tuple) and all(isinstance(i, (int, slice)) or i is Ellipsis for i in idx))

    def vjp(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def complex_mul(a, b):
    """(re1, im1) * (re2, im2) as real tensor pairs."""
    re1, im1 = a
    re2, im2 = b
    return sub(mul(re1, re2), mul(im1, im2)), add(mul(re1, im2), mul(im1, re2))


def unit_normalize(re, im, floor=1e-24):
    """Project each complex entry onto the unit circle.

    Entries with re^2 + im^2 < ``floor`` map to 1 + 0j and pass no gradient.
    """
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError(f"real/imag shapes differ: {re.shape} vs {im.shape}")
    r2 = re.data ** 2 + im.data ** 2
    ok = r2 >= floor
    r = np.sqrt(np.where(ok, r2, 1.0))
    out_re = np.where(ok, re.data / r, 1.0)
    out_im = np.where(ok, im.data / r, 0.0)
    inv_r = np.where(ok, 1.0 / r, 0.0)
    # Jacobian of (x, y)/r is (1/r) [[y'^2, -x'y'], [-x'y', x'^2]] in normalized coords.
    j_rr = inv_r * out_im * out_im
    j_ri = -inv_r * out_re * out_im
    j_ii = inv_r * out_re * out_re
    def joint(g_re, g_im):
        return g_re * j_rr + g_im * j_ri, g_re * j_ri + g_im * j_ii

    o_re = _make(out_re, (re, im), lambda g: joint(g, 0.0))
    o_im = _make(out_im, (re, im), lambda g: joint(0.0, g))
    return o_re, o_im
