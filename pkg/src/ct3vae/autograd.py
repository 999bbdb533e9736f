"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and remembers the operation that produced
it.  ``backward()`` on a scalar walks the graph in reverse topological order
and accumulates ``d(loss)/d(tensor)`` into the ``grad`` buffer of every
tensor created with ``requires_grad=True``.  Everything is float64: the
divergence constants in the model losses involve gamma-function ratios and
small exponents that float32 cannot resolve.

Tensors are immutable once created except for the ``grad`` buffer.  Graphs
carry no hidden state, so rebuilding the same graph and differentiating it
again yields identical gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import NumericError


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array plus the tape entry that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self):
        self.grad = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _lift(value):
        return value if isinstance(value, Tensor) else Tensor(value)

    def _node(self, data, parents, backward_fn):
        needs = any(p.requires_grad or p._parents for p in parents)
        return Tensor(data, requires_grad=False, _parents=parents if needs else (),
                      _backward_fn=backward_fn if needs else None)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        out_data = self.data + other.data

        def backward(grad, a=self, b=other):
            a._accumulate(_unbroadcast(grad, a.shape))
            b._accumulate(_unbroadcast(grad, b.shape))

        return self._node(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(grad, a=self):
            a._accumulate(-grad)

        return self._node(-self.data, (self,), backward)

    def __sub__(self, other):
        other = self._lift(other)
        out_data = self.data - other.data

        def backward(grad, a=self, b=other):
            a._accumulate(_unbroadcast(grad, a.shape))
            b._accumulate(_unbroadcast(-grad, b.shape))

        return self._node(out_data, (self, other), backward)

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        other = self._lift(other)
        out_data = self.data * other.data

        def backward(grad, a=self, b=other):
            a._accumulate(_unbroadcast(grad * b.data, a.shape))
            b._accumulate(_unbroadcast(grad * a.data, b.shape))

        return self._node(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out_data = self.data / other.data

        def backward(grad, a=self, b=other):
            a._accumulate(_unbroadcast(grad / b.data, a.shape))
            b._accumulate(_unbroadcast(-grad * a.data / (b.data ** 2), b.shape))

        return self._node(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        if self.data.shape[1] != other.data.shape[0]:
            raise ValueError(
                f"matmul dimension mismatch: {self.data.shape} @ {other.data.shape}")
        out_data = self.data @ other.data

        def backward(grad, a=self, b=other):
            a._accumulate(grad @ b.data.T)
            b._accumulate(a.data.T @ grad)

        return self._node(out_data, (self, other), backward)

    def __pow__(self, exponent):
        exponent = float(exponent)
        out_data = self.data ** exponent

        def backward(grad, a=self, e=exponent):
            a._accumulate(grad * e * a.data ** (e - 1.0))

        return self._node(out_data, (self,), backward)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(grad, a=self, o=out_data):
            a._accumulate(grad * o)

        return self._node(out_data, (self,), backward)

    def log(self):
        def backward(grad, a=self):
            a._accumulate(grad / a.data)

        return self._node(np.log(self.data), (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(grad, a=self, o=out_data):
            a._accumulate(grad * 0.5 / o)

        return self._node(out_data, (self,), backward)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(grad, a=self):
            a._accumulate(grad * (a.data > 0.0))

        return self._node(out_data, (self,), backward)

    def sigmoid(self):
        out_data = expit(self.data)

        def backward(grad, a=self, o=out_data):
            a._accumulate(grad * o * (1.0 - o))

        return self._node(out_data, (self,), backward)

    def softplus(self):
        out_data = np.logaddexp(0.0, self.data)

        def backward(grad, a=self):
            a._accumulate(grad * expit(a.data))

        return self._node(out_data, (self,), backward)

    def gather_rows(self, indices):
        """Select rows of a matrix; gradients scatter-add back."""
        idx = np.asarray(indices, dtype=np.intp)
        out_data = self.data[idx]

        def backward(grad, a=self, ii=idx):
            full = np.zeros_like(a.data)
            np.add.at(full, ii, grad)
            a._accumulate(full)

        return self._node(out_data, (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None):
        out_data = self.data.sum(axis=axis)

        def backward(grad, a=self, ax=axis):
            if ax is None:
                a._accumulate(np.broadcast_to(grad, a.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(grad, ax), a.shape).copy())

        return self._node(out_data, (self,), backward)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- differentiation ---------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every reachable requires_grad tensor.

        The receiver must be a scalar (shape () or size-1).
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def grad_check(f, x, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor.  The error at each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)`` and the maximum over
    coordinates is returned.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    loss = f(leaf)
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite function evaluation at base point: {loss.data}")
    loss.backward()
    analytic = leaf.grad.copy() if leaf.grad is not None else np.zeros_like(x0)

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = step
        hi = f(Tensor((flat + bump).reshape(x0.shape))).item()
        lo = f(Tensor((flat - bump).reshape(x0.shape))).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite function evaluation at coordinate {i}")
        num_flat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
