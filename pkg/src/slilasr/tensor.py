"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient. Outside a tape every op is a plain numpy
evaluation, which is what inference paths rely on.

Example::

    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape():
        loss = reduce("sum", matmul(w, w))
    backward(loss)
    w.grad  # -> array of 4.0
"""
import numpy as np


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


_ACTIVE = []


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as they execute, so the list is topologically sorted by
    construction. A tape supports exactly one backward traversal.
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out, parents, grad_fn):
        if self.consumed:
            raise TapeError("cannot record onto a tape that was already replayed")
        out._tape = self
        out._node = len(self.nodes)
        self.nodes.append((out, parents, grad_fn))

    def __len__(self):
        return len(self.nodes)


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    """Immutable dense float64 array that can take part in a tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node", "__weakref__")

    def __init__(self, data, requires_grad=False, *, _owned=False):
        if _owned and isinstance(data, np.ndarray) and data.dtype == np.float64:
            arr = data
        else:
            arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        # a finite sum implies finite entries; only scan when it is not
        if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a constant")
        return mul(self, Tensor(1.0 / np.asarray(other, dtype=np.float64)))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf. Only the optimiser rebinds its storage, between tapes."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)

    def assign(self, values):
        arr = np.array(values, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign shape {arr.shape} != parameter shape {self.data.shape}")
        # a finite sum implies finite entries; only scan when it is not
        if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
            raise ValueError("parameter update produced non-finite values")
        arr.flags.writeable = False
        self.data = arr


def _not_scalar(t):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, grad_fn):
    """Wrap an op result and record it if any parent participates in a tape.

    ``grad_fn(g)`` maps the output gradient to a tuple of parent gradients
    (``None`` for parents that need none).
    """
    out = Tensor(data, _owned=True)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, tuple(parents), grad_fn)
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss was not recorded on an active tape")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    tape.consumed = True
    grads = {id(loss): np.ones_like(loss.data)}
    for idx in range(loss._node, -1, -1):
        out, parents, grad_fn = tape.nodes[idx]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for parent, pg in zip(parents, grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._tape is tape:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            else:
                # leaf (parameter or input)
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
    tape.nodes = []


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b):
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b):
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b),
                   lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def relu(a):
    pos = a.data > 0.0  # relu'(0) = 0
    return make_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def tanh(a):
    y = np.tanh(a.data)
    return make_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a):
    y = np.exp(a.data)
    return make_op(y, (a,), lambda g: (g * y,))


def log(a):
    x = a.data
    if (x <= 0).any():
        raise ValueError("log of a non-positive value")
    return make_op(np.log(x), (a,), lambda g: (g / x,))


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}
ELEMENTWISE_KINDS = tuple(_BINARY) + tuple(_UNARY)


def elementwise(op_kind, a, b=None):
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](as_tensor(a), as_tensor(b))
    if op_kind in _UNARY:
        if b is not None:
            raise ValueError(f"{op_kind} takes one operand")
        return _UNARY[op_kind](as_tensor(a))
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# --------------------------------------------------------------------------
# linear algebra, reductions, structure
# --------------------------------------------------------------------------

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def _axis(a, axis):
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {a.shape}")
    axis %= a.ndim
    if a.shape[axis] == 0:
        raise ShapeError("cannot reduce over an empty axis")
    return axis


def argmax(a, axis=-1):
    """Index of the maximum along ``axis``; ties go to the lowest index."""
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    return np.argmax(data, axis=axis)


def reduce(op_kind, a, axis=None):
    """Sum, mean or max over one axis (or over everything when ``axis`` is None)."""
    if axis is None:
        a = reshape(a, (a.size,))
        axis = 0
    axis = _axis(a, axis)
    shape = a.shape
    if op_kind == "sum":
        return make_op(a.data.sum(axis=axis), (a,),
                       lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))
    if op_kind == "mean":
        n = shape[axis]
        return make_op(a.data.mean(axis=axis), (a,),
                       lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),))
    if op_kind == "max":
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        vals = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

        def grad_fn(g):
            out = np.zeros(shape)
            np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
            return (out,)

        return make_op(vals, (a,), grad_fn)
    raise ValueError(f"unknown reduction {op_kind!r}")


def reshape(a, shape):
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return make_op(data.copy(), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (g.transpose(inv),))


def broadcast_to(a, shape):
    src = a.shape
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {src} to {shape}") from None
    return make_op(data, (a,), lambda g: (unbroadcast(g, src),))


def concat(tensors, axis=-1):
    tensors = list(tensors)
    nd = tensors[0].ndim
    axis %= nd
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def grad_fn(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis)
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_op(data, tuple(tensors), grad_fn)


def slice_axis(a, axis, start, stop):
    axis %= a.ndim
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return make_op(a.data[index].copy(), (a,), grad_fn)


def log_softmax(a, axis=-1):
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(y)
    return make_op(y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def stop_gradient(a):
    return Tensor(a.data)
