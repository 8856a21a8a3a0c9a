"""
DEDN Toolkit Tensors

This module provides the dense arrays every other module composes and
the reverse-mode differentiation that trains them.

A ``Tape`` is created per forward pass. Parameters enter it through
``Tape.leaf``; each primitive below records itself on the tape of its
operands, and ``Tape.backward`` walks the record in reverse. Operands that
are not on a tape (plain ndarrays, constant tensors) are never
differentiated.

Arrays are row-major. Batched operands carry the sample axis first, and
every reduction that is not a full reduction runs over the last axis.
"""

import numpy as np

from .exceptions import ContractError, DimensionError


STORAGE_DTYPE = np.float32
CHECK_DTYPE = np.float64

# q is floored here before the log in kl_div
KL_FLOOR = 1e-12


class Tensor:
    """
    Immutable dense array, optionally recorded on a Tape.

    ``node_id`` is the position of the producing record on ``tape``; both
    are None for constants.
    """

    __slots__ = ('data', 'node_id', 'tape')

    def __init__(self, data, node_id=None, tape=None):
        data = np.asarray(data).view()
        data.setflags(write=False)
        self.data = data
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        """Return the underlying read-only ndarray."""
        return self.data

    def __repr__(self):
        where = 'constant' if self.tape is None else f'node={self.node_id}'
        return f'Tensor(shape={self.shape}, dtype={self.data.dtype}, {where})'


class _Node:
    __slots__ = ('op', 'inputs', 'backward', 'shape')

    def __init__(self, op, inputs, backward, shape):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.shape = shape


class Tape:
    """
    Ordered record of primitive applications for one forward pass.

    Node ids are assigned in application order, so every node's inputs
    precede it. ``dtype`` is float32 for training and float64 for gradient
    checking; operands are cast to it on entry.
    """

    def __init__(self, dtype=STORAGE_DTYPE):
        self.dtype = np.dtype(dtype)
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value):
        """Register a differentiable input and return its tensor."""
        data = np.array(value, dtype=self.dtype)
        return self.record('leaf', data, (), None)

    def constant(self, value):
        """Return a non-differentiable tensor in this tape's dtype."""
        return Tensor(np.array(value, dtype=self.dtype))

    def record(self, op, value, inputs, backward):
        node_id = len(self.nodes)
        value = np.asarray(value, dtype=self.dtype)
        self.nodes.append(_Node(op, inputs, backward, value.shape))
        return Tensor(value, node_id, self)

    def leaf_ids(self):
        return [i for i, node in enumerate(self.nodes) if node.op == 'leaf']

    def backward(self, loss):
        """
        Differentiate a scalar loss with respect to every leaf.

        Returns:
            dict mapping leaf node id to a gradient array of the leaf's
            shape. Leaves the loss does not depend on get zeros.
        """
        if not isinstance(loss, Tensor) or loss.tape is not self:
            raise ContractError('backward: loss is not recorded on this tape')
        if loss.ndim != 0:
            raise ContractError(
                f'backward: loss must be a scalar, got shape {loss.shape}'
            )

        grads = {loss.node_id: np.ones((), dtype=self.dtype)}
        for node_id in range(loss.node_id, -1, -1):
            node = self.nodes[node_id]
            grad = grads.get(node_id)
            if grad is None or node.backward is None:
                continue
            for input_id, input_grad in zip(node.inputs, node.backward(grad)):
                if input_id is None or input_grad is None:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + input_grad
                else:
                    grads[input_id] = input_grad

        return {
            i: np.asarray(grads[i], dtype=self.dtype) if i in grads
            else np.zeros(self.nodes[i].shape, dtype=self.dtype)
            for i in self.leaf_ids()
        }


def backward(loss):
    """Gradients of a recorded scalar loss, keyed by leaf node id."""
    if not isinstance(loss, Tensor) or loss.tape is None:
        raise ContractError('backward: loss is not recorded on a tape')
    return loss.tape.backward(loss)


# =============================================================================
# PLUMBING
# =============================================================================

def as_array(value):
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def _operands(*values):
    tape = None
    for value in values:
        if isinstance(value, Tensor) and value.tape is not None:
            if tape is None:
                tape = value.tape
            elif value.tape is not tape:
                raise ContractError('operands are recorded on different tapes')

    raw = [v.data if isinstance(v, Tensor) else v for v in values]
    if tape is None:
        return None, [np.asarray(v) for v in raw]
    return tape, [np.asarray(v, dtype=tape.dtype) for v in raw]


def _emit(op, value, tape, operands, backward):
    if tape is None:
        return Tensor(value)
    inputs = tuple(
        o.node_id if isinstance(o, Tensor) and o.tape is tape else None
        for o in operands
    )
    return tape.record(op, value, inputs, backward)


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, x, y):
    try:
        return np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise DimensionError(
            f'{op}: shapes {x.shape} and {y.shape} do not broadcast'
        ) from None


# =============================================================================
# PRIMITIVES
# =============================================================================

def matmul(a, b):
    """
    Matrix product over the last two axes.

    ``a`` may be a vector (K) against a K x N matrix, or a matrix / batch of
    matrices; a 2-D operand is shared across the batch of the other one.
    """
    tape, (x, y) = _operands(a, b)
    if x.ndim not in (1, 2, 3) or y.ndim not in (2, 3) or (x.ndim == 1 and y.ndim != 2):
        raise DimensionError(
            f'matmul: unsupported ranks for shapes {x.shape} and {y.shape}'
        )
    if x.shape[-1] != y.shape[-2]:
        raise DimensionError(
            f'matmul: inner dimensions disagree for shapes {x.shape} and {y.shape}'
        )

    def backward(g):
        if x.ndim == 1:
            return y @ g, np.outer(x, g)
        return (
            _unbroadcast(g @ _swap(y), x.shape),
            _unbroadcast(_swap(x) @ g, y.shape),
        )

    return _emit('matmul', x @ y, tape, (a, b), backward)


def transpose(a):
    """Swap the last two axes."""
    tape, (x,) = _operands(a)
    if x.ndim < 2:
        raise DimensionError(f'transpose: need at least 2 axes, got {x.shape}')
    return _emit('transpose', _swap(x), tape, (a,), lambda g: (_swap(g),))


def add(a, b):
    tape, (x, y) = _operands(a, b)
    _broadcast_shape('add', x, y)

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _emit('add', x + y, tape, (a, b), backward)


def sub(a, b):
    tape, (x, y) = _operands(a, b)
    _broadcast_shape('sub', x, y)

    def backward(g):
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return _emit('sub', x - y, tape, (a, b), backward)


def mul(a, b):
    """Elementwise product."""
    tape, (x, y) = _operands(a, b)
    _broadcast_shape('mul', x, y)

    def backward(g):
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return _emit('mul', x * y, tape, (a, b), backward)


def scale(a, factor):
    """Multiply by a Python scalar."""
    tape, (x,) = _operands(a)
    factor = float(factor)
    return _emit('scale', x * factor, tape, (a,), lambda g: (g * factor,))


def softmax_rows(a):
    """Softmax over the last axis, with max subtraction."""
    tape, (x,) = _operands(a)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit('softmax', y, tape, (a,), backward)


def log_softmax_rows(a):
    """Log-softmax over the last axis, in shifted log-sum-exp form."""
    tape, (x,) = _operands(a)
    z = x - x.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _emit('log_softmax', out, tape, (a,), backward)


def sum_rows(a):
    """Sum over the last axis."""
    tape, (x,) = _operands(a)

    def backward(g):
        return (np.broadcast_to(g[..., None], x.shape).copy(),)

    return _emit('sum_rows', x.sum(axis=-1), tape, (a,), backward)


def total(a):
    """Sum of every entry, as a scalar."""
    tape, (x,) = _operands(a)
    return _emit(
        'total', x.sum(), tape, (a,),
        lambda g: (np.full(x.shape, g, dtype=x.dtype),),
    )


def mean(a):
    """Mean of every entry, as a scalar."""
    size = np.size(a.data if isinstance(a, Tensor) else a)
    return scale(total(a), 1.0 / size)


def take(a, index):
    """Gather entries along the last axis."""
    tape, (x,) = _operands(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= x.shape[-1]):
        raise DimensionError(
            f'take: index out of range for last axis of size {x.shape[-1]}'
        )

    def backward(g):
        gx = np.zeros_like(x)
        np.add.at(gx, (Ellipsis, index), g)
        return (gx,)

    return _emit('take', x[..., index], tape, (a,), backward)


def concat(parts):
    """Concatenate along the last axis."""
    tape, arrays = _operands(*parts)
    try:
        value = np.concatenate(arrays, axis=-1)
    except ValueError as exc:
        raise DimensionError(f'concat: {exc}') from None
    bounds = np.cumsum([a.shape[-1] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=-1))

    return _emit('concat', value, tape, tuple(parts), backward)


def pick(a, labels):
    """
    Select one entry per row of the last axis.

    A vector with an integer label gives a scalar; a B x K batch with B
    labels gives a length-B vector.
    """
    tape, (x,) = _operands(a)
    labels = np.asarray(labels, dtype=np.intp)
    if x.ndim == 1:
        if labels.ndim != 0:
            raise DimensionError('pick: a vector takes a single label')
        where = (labels,)
    else:
        if labels.shape != x.shape[:-1]:
            raise DimensionError(
                f'pick: {labels.shape[0] if labels.ndim else 1} labels for '
                f'{x.shape[0]} rows'
            )
        where = (np.arange(x.shape[0]), labels)

    def backward(g):
        gx = np.zeros_like(x)
        gx[where] = g
        return (gx,)

    return _emit('pick', x[where], tape, (a,), backward)


def kl_div(p, q):
    """
    Kullback-Leibler divergence KL(p || q) over the last axis.

    q is floored at KL_FLOOR before the log; entries with p == 0
    contribute 0.
    """
    tape, (x, y) = _operands(p, q)
    if x.shape != y.shape:
        raise DimensionError(f'kl_div: shapes {x.shape} and {y.shape} differ')
    qf = np.maximum(y, KL_FLOOR)
    positive = x > 0
    log_ratio = np.log(np.where(positive, x, 1)) - np.log(qf)
    out = np.where(positive, x * log_ratio, 0).sum(axis=-1)

    def backward(g):
        g = g[..., None]
        return (
            g * np.where(positive, log_ratio + 1, 0),
            g * np.where(y > KL_FLOOR, -x / qf, 0),
        )

    return _emit('kl_div', out, tape, (p, q), backward)


def mse(a, b):
    """Un-averaged squared L2 distance over the last axis."""
    tape, (x, y) = _operands(a, b)
    if x.shape != y.shape:
        raise DimensionError(f'mse: shapes {x.shape} and {y.shape} differ')
    d = x - y

    def backward(g):
        gx = 2 * d * g[..., None]
        return gx, -gx

    return _emit('mse', (d * d).sum(axis=-1), tape, (a, b), backward)
