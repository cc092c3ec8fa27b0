"""A small reverse-mode automatic differentiation engine on numpy arrays.

Each :class:`Tensor` produced by an operation remembers its parents and a
closure mapping the upstream gradient to one gradient per parent. Complex
values are handled by treating real and imaginary parts as independent real
coordinates: the gradient stored for a complex tensor ``z`` is
``dL/dRe(z) + 1j * dL/dIm(z)``. Real tensors receiving a complex gradient keep
only its real part.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from photonic_graybox.errors import ContractViolation
from photonic_graybox.linalg import exp_adjoint_from_eig, expm_unitary_batch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Callable | None = None, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.is_complex and np.iscomplexobj(g):
            g = g.real
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self):
        return scale(reduce_sum(self), 1.0 / self.data.size)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    # -- reverse pass -------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate ``d self / d leaf`` into ``.grad`` of every leaf that
        requires gradients. ``self`` must be a real scalar unless ``grad`` is
        supplied."""
        if grad is None:
            if self.data.size != 1 or self.is_complex:
                raise ContractViolation("backward() without a seed needs a real scalar")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if not parent.is_complex and np.iscomplexobj(pg):
                    pg = pg.real
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological(root: Tensor) -> list:
    order, state = [], {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise ContractViolation("cycle detected in the computation record")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                pm = state.get(id(p))
                if pm == 1:
                    raise ContractViolation("cycle detected in the computation record")
                if pm is None:
                    stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def scale(a: Tensor, c) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * np.conj(c),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b), lambda g: (
        _unbroadcast(g * np.conj(b.data), a.shape),
        _unbroadcast(g * np.conj(a.data), b.shape),
    ))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _result(out, (a,), lambda g: (-g * np.conj(out * out),))


def square(a: Tensor) -> Tensor:
    if a.is_complex:
        raise ContractViolation("square() is for real tensors; use abs2()")
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * np.conj(out),))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / np.conj(a.data),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def abs2(a: Tensor) -> Tensor:
    """``|a|^2``, real-valued."""
    out = (a.data * np.conj(a.data)).real
    return _result(out, (a,), lambda g: (2.0 * g * a.data,))


def real(a: Tensor) -> Tensor:
    return _result(a.data.real.copy(), (a,), lambda g: (g.real.astype(np.complex128),))


def imag(a: Tensor) -> Tensor:
    return _result(a.data.imag.copy(), (a,), lambda g: (1j * g.real,))


def conj(a: Tensor) -> Tensor:
    return _result(np.conj(a.data), (a,), lambda g: (np.conj(g),))


def complex_from(re: Tensor, im: Tensor | None = None) -> Tensor:
    """``re + 1j * im`` from two real tensors."""
    re = as_tensor(re)
    if im is None:
        return _result(re.data.astype(np.complex128), (re,), lambda g: (g.real,))
    im = as_tensor(im)
    return _result(re.data + 1j * im.data, (re, im), lambda g: (
        _unbroadcast(g.real, re.shape), _unbroadcast(g.imag, im.shape)))


# -- shape and reduction ----------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def take(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros(a.shape, dtype=np.result_type(a.data, g))
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), back)


def scatter(a: Tensor, shape, idx, dtype=None) -> Tensor:
    """Place ``a`` into a zero array of ``shape`` at ``idx`` (inverse of take)."""
    out = np.zeros(shape, dtype=dtype or a.data.dtype)
    out[idx] = a.data
    return _result(out, (a,), lambda g: (g[idx],))


def concatenate(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _result(np.stack([p.data for p in parts], axis=axis), tuple(parts), back)


# -- linear algebra ---------------------------------------------------------


def _h(x):
    return np.conj(np.swapaxes(x, -1, -2))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 or b.ndim == 1:
        raise ContractViolation("matmul expects matrices; reshape vectors first")
    return _result(a.data @ b.data, (a, b), lambda g: (
        _unbroadcast(g @ _h(b.data), a.shape),
        _unbroadcast(_h(a.data) @ g, b.shape),
    ))


def hermitian_conj(a: Tensor) -> Tensor:
    return _result(_h(a.data), (a,), lambda g: (_h(g),))


def expm_unitary(h: Tensor, length: float) -> Tensor:
    """``exp(-i H l)`` on a stack of Hermitian matrices, with the
    eigenbasis divided-difference adjoint as its gradient rule."""
    u, w, v = expm_unitary_batch(h.data, length)
    return _result(u, (h,), lambda g: (exp_adjoint_from_eig(w, v, length, g),))


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences over all entries."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ContractViolation(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return square(diff).mean()


def no_grad_value(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)
