"""Backbone layers: linear, 1-D convolution, GRU, batch norm, dropout.

Sequence tensors are ``[B, T, C]`` except the convolution, which takes and
returns ``[B, C, T]``. Variable-length batches are zero padded and described
by a ``lengths`` vector; layers that pool or normalise over time only look at
valid frames.
"""
import numpy as np

from . import kernels
from .tensor import (
    Parameter,
    ShapeError,
    Tensor,
    add,
    concat,
    make_op,
    matmul,
    mul,
    reshape,
    transpose,
)


def length_mask(lengths, T):
    """``[B, T]`` float mask with ones on valid frames."""
    lengths = np.asarray(lengths)
    return (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)


def conv_out_length(T, kernel_width, stride):
    return (np.asarray(T) - kernel_width) // stride + 1


class Module:
    """Minimal parameter container.

    Parameters and sub-modules are discovered from instance attributes in
    assignment order, which fixes the layout of flat parameter tables.
    """

    training = True
    _buffers = ()

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        for mod_name, mod in self.named_modules():
            for buf in mod._buffers:
                key = f"{mod_name}.{buf}" if mod_name else buf
                state[key] = np.asarray(getattr(mod, buf), dtype=np.float64)
        return state

    def load_state_dict(self, state):
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in self.named_parameters():
            p.assign(state[name])
        for mod_name, mod in self.named_modules():
            for buf in mod._buffers:
                key = f"{mod_name}.{buf}" if mod_name else buf
                cur = getattr(mod, buf)
                val = np.array(state[key], dtype=np.float64)
                if val.shape != np.shape(cur):
                    raise ShapeError(f"buffer {key}: shape {val.shape} != {np.shape(cur)}")
                setattr(mod, buf, val)

    def train(self, mode=True):
        for _, mod in self.named_modules():
            mod.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer(Module):
    """``y = x W^T + b`` over the last axis."""

    def __init__(self, in_features, out_features, rng):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (out_features, in_features)))
        self.bias = Parameter(_uniform(rng, bound, (out_features,)))

    def __call__(self, x):
        lead = x.shape[:-1]
        if x.shape[-1] != self.weight.shape[1]:
            raise ShapeError(f"linear expects {self.weight.shape[1]} input features, got {x.shape[-1]}")
        flat = reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
        y = add(matmul(flat, transpose(self.weight)), self.bias)
        return y if x.ndim == 2 else reshape(y, lead + (self.weight.shape[0],))


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv1d(x, weight, bias, stride=1):
    """Valid (unpadded) 1-D convolution. ``x`` is ``[B, C, T]``, ``weight`` ``[O, C, k]``."""
    if x.ndim != 3:
        raise ShapeError(f"conv1d expects [B, C, T], got {x.shape}")
    B, C, T = x.shape
    O, Cw, k = weight.shape
    if C != Cw:
        raise ShapeError(f"conv1d: input has {C} channels, layer expects {Cw}")
    if T < k:
        raise ShapeError(f"conv1d: input length {T} shorter than kernel width {k}")
    T_out = (T - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=2)[:, :, ::stride, :]
    patches = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * T_out, C * k)
    w2 = weight.data.reshape(O, C * k)
    y = (patches @ w2.T).reshape(B, T_out, O) + bias.data
    y = np.ascontiguousarray(y.transpose(0, 2, 1))

    def grad_fn(g):
        gt = g.transpose(0, 2, 1).reshape(B * T_out, O)
        dw = (gt.T @ patches).reshape(O, C, k)
        db = g.sum(axis=(0, 2))
        dp = (gt @ w2).reshape(B, T_out, C, k)
        dx = np.zeros((B, C, T))
        span = stride * (T_out - 1) + 1
        for j in range(k):
            dx[:, :, j:j + span:stride] += dp[:, :, :, j].transpose(0, 2, 1)
        return dx, dw, db

    return make_op(y, (x, weight, bias), grad_fn)


class Conv1dLayer(Module):
    def __init__(self, in_channels, out_channels, kernel_width, stride, rng):
        if min(in_channels, out_channels, kernel_width, stride) < 1:
            raise ValueError("conv dimensions must be positive")
        self.stride = int(stride)
        bound = 1.0 / np.sqrt(in_channels * kernel_width)
        self.weight = Parameter(_uniform(rng, bound, (out_channels, in_channels, kernel_width)))
        self.bias = Parameter(_uniform(rng, bound, (out_channels,)))

    @property
    def kernel_width(self):
        return self.weight.shape[2]

    def out_length(self, T):
        return conv_out_length(T, self.kernel_width, self.stride)

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, self.stride)


# --------------------------------------------------------------------------
# gated recurrent layer
# --------------------------------------------------------------------------

def gru_recurrence(xp, w_hh, b_hh, lengths, reverse=False):
    """Run the GRU recurrence over pre-projected inputs ``xp`` ``[B, T, 3H]``."""
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    out, cache = kernels.gru_forward(xp.data, w_hh.data, b_hh.data, lengths, reverse)
    w = w_hh.data

    def grad_fn(g):
        return kernels.gru_backward(np.ascontiguousarray(g), w, lengths, reverse, cache)

    return make_op(out, (xp, w_hh, b_hh), grad_fn)


class _GruDirection(Module):
    def __init__(self, input_size, hidden_size, rng):
        bi = 1.0 / np.sqrt(input_size)
        bh = 1.0 / np.sqrt(hidden_size)
        self.w_ih = Parameter(_uniform(rng, bi, (input_size, 3 * hidden_size)))
        self.b_ih = Parameter(_uniform(rng, bi, (3 * hidden_size,)))
        self.w_hh = Parameter(_uniform(rng, bh, (hidden_size, 3 * hidden_size)))
        self.b_hh = Parameter(_uniform(rng, bh, (3 * hidden_size,)))

    def __call__(self, x, lengths, reverse=False):
        B, T, C = x.shape
        xp = add(matmul(reshape(x, (B * T, C)), self.w_ih), self.b_ih)
        return gru_recurrence(reshape(xp, (B, T, -1)), self.w_hh, self.b_hh, lengths, reverse)


class RecurrentLayer(Module):
    """GRU layer, forward-only or bidirectional (directions concatenated per frame)."""

    def __init__(self, input_size, hidden_size, rng, bidirectional=True):
        self.hidden_size = int(hidden_size)
        self.input_size = int(input_size)
        self.bidirectional = bool(bidirectional)
        self.fwd = _GruDirection(input_size, hidden_size, rng)
        if bidirectional:
            self.bwd = _GruDirection(input_size, hidden_size, rng)

    @property
    def output_size(self):
        return self.hidden_size * (2 if self.bidirectional else 1)

    def __call__(self, x, lengths=None):
        if x.ndim != 3:
            raise ShapeError(f"recurrent layer expects [B, T, C], got {x.shape}")
        B, T, C = x.shape
        if T == 0:
            raise ShapeError("recurrent layer needs at least one time step")
        if C != self.input_size:
            raise ShapeError(f"recurrent layer expects {self.input_size} channels, got {C}")
        if lengths is None:
            lengths = np.full(B, T)
        out = self.fwd(x, lengths)
        if not self.bidirectional:
            return out
        return concat([out, self.bwd(x, lengths, reverse=True)], axis=-1)


# --------------------------------------------------------------------------
# batch normalisation
# --------------------------------------------------------------------------

def batch_norm(x, gamma, beta, eps, mask=None, stats=None):
    """Normalise over every axis but the last (channels).

    With ``stats=None`` the batch statistics of the frames selected by ``mask``
    are used and returned alongside the output; otherwise ``stats`` is a
    ``(mean, var)`` pair used as fixed constants.
    """
    C = x.shape[-1]
    if gamma.shape != (C,):
        raise ShapeError(f"batch norm over {gamma.shape[0]} channels, input has {C}")
    x2 = x.data.reshape(-1, C)
    m = np.ones((x2.shape[0], 1)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    if stats is None:
        n = m.sum()
        if n < 2:
            raise ValueError("batch norm in training mode needs at least 2 samples per channel")
        mean = (m * x2).sum(axis=0) / n
        xc = x2 - mean
        var = (m * xc * xc).sum(axis=0) / n
    else:
        mean, var = stats
        xc = x2 - mean
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g_ = gamma.data
    y = (xhat * g_ + beta.data).reshape(x.shape)
    train = stats is None

    def grad_fn(g):
        g2 = g.reshape(-1, C)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
        dxhat = g2 * g_
        dx = dxhat * inv
        if train:
            dvar = -0.5 * inv ** 3 * (dxhat * xc).sum(axis=0)
            dmean = -inv * dxhat.sum(axis=0) - 2.0 * dvar * (m * xc).sum(axis=0) / n
            dx = dx + m * (2.0 * dvar * xc + dmean) / n
        return dx.reshape(x.shape), dgamma, dbeta

    out = make_op(y, (x, gamma, beta), grad_fn)
    if train:
        return out, mean, var, n
    return out


class BatchNorm1d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, num_channels, momentum=0.1, eps=1e-5):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.scale = Parameter(np.ones(num_channels))
        self.shift = Parameter(np.zeros(num_channels))
        self.running_mean = np.zeros(num_channels)
        self.running_var = np.ones(num_channels)

    def __call__(self, x, mask=None, channel_axis=-1):
        moved = channel_axis not in (-1, x.ndim - 1)
        if moved:
            perm = [i for i in range(x.ndim) if i != channel_axis % x.ndim] + [channel_axis % x.ndim]
            x = transpose(x, perm)
        if self.training:
            y, mean, var, n = batch_norm(x, self.scale, self.shift, self.eps, mask)
            unbiased = var * n / (n - 1)
            mom = self.momentum
            self.running_mean = (1 - mom) * self.running_mean + mom * mean
            self.running_var = (1 - mom) * self.running_var + mom * unbiased
        else:
            y = batch_norm(x, self.scale, self.shift, self.eps, mask,
                           stats=(self.running_mean, self.running_var))
        if moved:
            y = transpose(y, np.argsort(perm))
        return y


def dropout(x, p, rng, training):
    """Inverted dropout: kept activations are scaled by ``1 / (1 - p)``."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


class Dropout(Module):
    def __init__(self, p, rng):
        self.p = float(p)
        self.rng = rng

    def __call__(self, x):
        return dropout(x, self.p, self.rng, self.training)
