"""
    kgmc.autograd
    ~~~~~~~~~~~~~

    Contains a small reverse-mode differentiation engine over float64 numpy arrays and the Adam optimizer.
"""
from __future__ import annotations

import typing

import numpy
from scipy import special

from . import hints

__all__ = ['Tensor', 'concat', 'Adam', 'as_tensor']

#: Type hint that defines a value usable as an operand of :class:`~kgmc.autograd.Tensor` operations.
Operand = typing.Union['Tensor', numpy.ndarray, float, int]

_SQRT2 = numpy.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / numpy.sqrt(2.0 * numpy.pi)


def _unbroadcast(grad: numpy.ndarray, shape: typing.Tuple[int, ...]) -> numpy.ndarray:
    """
    Sum a broadcast gradient back down to ``shape``.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value: Operand) -> 'Tensor':
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """
    Array node of a computation graph.

    Operations on tensors record a closure that propagates the output gradient to their inputs;
    :meth:`~kgmc.autograd.Tensor.backward` runs those closures in reverse topological order.
    """

    #: Makes numpy arrays on the left of an operator defer to the reflected methods below.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: hints.Bool = False,
                 parents: typing.Tuple['Tensor', ...] = (), op: hints.Str = '') -> None:
        self.data = numpy.asarray(data, dtype=numpy.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = None
        self._op = op

    def __repr__(self) -> hints.Str:
        return '<{}(shape={}, op={!r})>'.format(self.__class__.__name__, self.shape, self._op)

    @property
    def shape(self) -> typing.Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> hints.Int:
        return self.data.ndim

    def item(self) -> hints.Float:
        return float(self.data)

    def numpy(self) -> numpy.ndarray:
        return self.data.copy()

    def _child(self, data, parents, op, backward) -> 'Tensor':
        out = Tensor(data, any(p.requires_grad for p in parents), parents, op)
        if out.requires_grad:
            out._backward = backward
        return out

    def _accumulate(self, grad: numpy.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.data.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: typing.Optional[numpy.ndarray] = None) -> None:
        """
        Propagate gradients from this tensor to every tensor it depends on.

        :param grad: Seed gradient; ones when omitted
        :type grad: :class:`~numpy.ndarray` or :class:`~NoneType`
        """
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if p.requires_grad and id(p) not in seen)
        self.grad = numpy.ones_like(self.data) if grad is None else numpy.asarray(grad, dtype=float)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic

    def __add__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)

        def backward(g):
            self._accumulate(g)
            other._accumulate(g)
        return self._child(self.data + other.data, (self, other), 'add', backward)

    __radd__ = __add__

    def __neg__(self) -> 'Tensor':
        return self._child(-self.data, (self,), 'neg', lambda g: self._accumulate(-g))

    def __sub__(self, other: Operand) -> 'Tensor':
        return self + (-as_tensor(other))

    def __rsub__(self, other: Operand) -> 'Tensor':
        return as_tensor(other) + (-self)

    def __mul__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)

        def backward(g):
            self._accumulate(g * other.data)
            other._accumulate(g * self.data)
        return self._child(self.data * other.data, (self, other), 'mul', backward)

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)

        def backward(g):
            self._accumulate(g / other.data)
            other._accumulate(-g * self.data / (other.data ** 2))
        return self._child(self.data / other.data, (self, other), 'div', backward)

    def __rtruediv__(self, other: Operand) -> 'Tensor':
        return as_tensor(other) / self

    def __pow__(self, exponent: hints.Float) -> 'Tensor':
        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))
        return self._child(self.data ** exponent, (self,), 'pow', backward)

    def __matmul__(self, other: Operand) -> 'Tensor':
        other = as_tensor(other)

        def backward(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)
        return self._child(self.data @ other.data, (self, other), 'matmul', backward)

    def __rmatmul__(self, other: Operand) -> 'Tensor':
        return as_tensor(other) @ self

    @property
    def T(self) -> 'Tensor':  # pylint: disable=invalid-name
        return self._child(self.data.T, (self,), 'transpose', lambda g: self._accumulate(g.T))

    def reshape(self, *shape) -> 'Tensor':
        return self._child(self.data.reshape(*shape), (self,), 'reshape',
                           lambda g: self._accumulate(g.reshape(self.data.shape)))

    # Element-wise nonlinearities

    def relu(self) -> 'Tensor':
        mask = self.data > 0
        return self._child(self.data * mask, (self,), 'relu', lambda g: self._accumulate(g * mask))

    def leaky_relu(self, slope: hints.Float = 0.2) -> 'Tensor':
        scale = numpy.where(self.data > 0, 1.0, slope)
        return self._child(self.data * scale, (self,), 'leaky_relu', lambda g: self._accumulate(g * scale))

    def tanh(self) -> 'Tensor':
        out = numpy.tanh(self.data)
        return self._child(out, (self,), 'tanh', lambda g: self._accumulate(g * (1.0 - out ** 2)))

    def gelu(self) -> 'Tensor':
        """
        Exact GeLU, x * Phi(x), with the normal CDF computed from erf.
        """
        x = self.data
        cdf = 0.5 * (1.0 + special.erf(x / _SQRT2))
        pdf = _INV_SQRT_2PI * numpy.exp(-0.5 * x ** 2)
        return self._child(x * cdf, (self,), 'gelu', lambda g: self._accumulate(g * (cdf + x * pdf)))

    def exp(self) -> 'Tensor':
        out = numpy.exp(self.data)
        return self._child(out, (self,), 'exp', lambda g: self._accumulate(g * out))

    def sqrt(self) -> 'Tensor':
        return self ** 0.5

    # Reductions and indexing

    def sum(self, axis: typing.Optional[int] = None, keepdims: hints.Bool = False) -> 'Tensor':
        def backward(g):
            if axis is not None and not keepdims:
                g = numpy.expand_dims(g, axis)
            self._accumulate(numpy.broadcast_to(g, self.data.shape))
        return self._child(self.data.sum(axis=axis, keepdims=keepdims), (self,), 'sum', backward)

    def mean(self, axis: typing.Optional[int] = None, keepdims: hints.Bool = False) -> 'Tensor':
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    def take(self, rows: numpy.ndarray) -> 'Tensor':
        """
        Gather rows; repeated rows accumulate their gradients.
        """
        rows = numpy.asarray(rows, dtype=numpy.intp)

        def backward(g):
            full = numpy.zeros_like(self.data)
            numpy.add.at(full, rows, g)
            self._accumulate(full)
        return self._child(self.data[rows], (self,), 'take', backward)

    def segment_sum(self, segments: numpy.ndarray, count: hints.Int) -> 'Tensor':
        """
        Sum rows into ``count`` buckets given the bucket of every row.
        """
        segments = numpy.asarray(segments, dtype=numpy.intp)
        out = numpy.zeros((count,) + self.data.shape[1:])
        numpy.add.at(out, segments, self.data)
        return self._child(out, (self,), 'segment_sum', lambda g: self._accumulate(g[segments]))

    def row_norm(self) -> 'Tensor':
        """
        Euclidean norm of every row as a column; rows of zero norm get a zero subgradient.
        """
        norm = numpy.sqrt((self.data ** 2).sum(axis=1, keepdims=True))
        safe = numpy.where(norm > 0, norm, 1.0)

        def backward(g):
            self._accumulate(numpy.where(norm > 0, g * self.data / safe, 0.0))
        return self._child(norm, (self,), 'row_norm', backward)

    def dropout(self, rate: hints.Float, rng: numpy.random.Generator) -> 'Tensor':
        """
        Inverted dropout: zero entries with probability ``rate`` and rescale survivors.
        """
        if rate <= 0:
            return self
        mask = (rng.random(self.data.shape) >= rate) / (1.0 - rate)
        return self._child(self.data * mask, (self,), 'dropout', lambda g: self._accumulate(g * mask))


def concat(tensors: typing.Sequence[Tensor], axis: hints.Int = 1) -> Tensor:
    """
    Concatenate tensors along an axis.

    :param tensors: Tensors with matching shapes off the axis
    :type tensors: :class:`~list`
    :param axis: Concatenation axis
    :type axis: :class:`~int`
    :return: Concatenated tensor
    :rtype: :class:`~kgmc.autograd.Tensor`
    """
    tensors = [as_tensor(t) for t in tensors]
    bounds = numpy.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def backward(g):
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            t._accumulate(numpy.take(g, numpy.arange(start, stop), axis=axis))  # pylint: disable=protected-access
    data = numpy.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, any(t.requires_grad for t in tensors), tuple(tensors), 'concat')
    if out.requires_grad:
        out._backward = backward  # pylint: disable=protected-access
    return out


class Adam:
    """
    Adam optimizer over a list of parameter tensors.
    """

    def __init__(self, params: typing.Sequence[Tensor], lr: hints.Float = 0.001, beta1: hints.Float = 0.9,
                 beta2: hints.Float = 0.999, eps: hints.Float = 1e-8) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = [numpy.zeros_like(p.data) for p in self.params]
        self._v = [numpy.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """
        Apply one bias-corrected update; parameters without a gradient are left alone.
        """
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / correction1) / (numpy.sqrt(v / correction2) + self.eps)
