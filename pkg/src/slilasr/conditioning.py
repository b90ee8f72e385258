"""Language conditioning blocks: FiLM, 1-D squeeze-and-excitation, and their compositions.

The FiLM generator maps a one-hot language code to per-layer, per-channel
scale/shift vectors in a single pass::

    a     = tanh(W_c tanh(W_d d + b_d) + b_c)
    gamma = tanh(W_gamma a + b_gamma)      # L*C values
    beta  = tanh(W_beta  a + b_beta)       # L*C values

FiLM then computes ``gamma * x + beta`` per channel, shared across frames.
The SE block gates channels with ``sigmoid(W2 relu(W1 mean_t(x) + b1) + b2)``.
SLIL is SE applied to FiLM output; SE-FiLM is the reverse order.
"""
from dataclasses import dataclass

import numpy as np

from .layers import LinearLayer, Module, length_mask
from .tensor import (
    ShapeError,
    Tensor,
    as_tensor,
    broadcast_to,
    concat,
    mul,
    add,
    reduce,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    tanh,
)

LANGUAGES = ("A", "B", "MIXED")
MODES = ("none", "append", "film", "slil", "se_film")
POSITIONS = ("before", "after")
GAMMA_INIT = 0.9
SE_GATE_BIAS_INIT = 2.0


@dataclass(frozen=True)
class LanguageCode:
    """One-hot sentence-level language code."""

    vector: tuple

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("language code must be a non-empty vector")
        if not (np.isin(v, (0.0, 1.0)).all() and v.sum() == 1.0):
            raise ValueError(f"not a one-hot code: {self.vector}")
        object.__setattr__(self, "vector", tuple(float(x) for x in v))

    @classmethod
    def from_index(cls, index, dim=len(LANGUAGES)):
        if not 0 <= index < dim:
            raise ValueError(f"language index {index} outside [0, {dim})")
        v = [0.0] * dim
        v[index] = 1.0
        return cls(tuple(v))

    @classmethod
    def from_label(cls, label):
        return cls.from_index(LANGUAGES.index(label))

    @property
    def index(self):
        return self.vector.index(1.0)

    @property
    def dim(self):
        return len(self.vector)

    def array(self):
        return np.array(self.vector)


def codes_matrix(codes):
    """Stack LanguageCodes (or pass through an array) into a ``[B, D]`` array."""
    if isinstance(codes, LanguageCode):
        return codes.array()[None, :]
    if isinstance(codes, np.ndarray):
        return codes.astype(np.float64).reshape(-1, codes.shape[-1])
    return np.stack([c.array() for c in codes])


@dataclass(frozen=True)
class ConditioningConfig:
    mode: str = "none"
    position: str = "before"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown conditioning mode {self.mode!r}; expected one of {MODES}")
        if self.position not in POSITIONS:
            raise ValueError(f"unknown position {self.position!r}; expected one of {POSITIONS}")

    @property
    def uses_film(self):
        return self.mode in ("film", "slil", "se_film")

    @property
    def uses_se(self):
        return self.mode in ("slil", "se_film")

    @property
    def needs_code(self):
        return self.mode != "none"


# --------------------------------------------------------------------------
# FiLM
# --------------------------------------------------------------------------

@dataclass
class FilmParams:
    """Scale and shift for every encoder layer: ``[B, L*C]`` tensors."""

    gamma: Tensor
    beta: Tensor
    num_layers: int
    channels: int

    def layer(self, i):
        if not 0 <= i < self.num_layers:
            raise IndexError(f"layer {i} outside [0, {self.num_layers})")
        lo, hi = i * self.channels, (i + 1) * self.channels
        return slice_axis(self.gamma, 1, lo, hi), slice_axis(self.beta, 1, lo, hi)

    @classmethod
    def constant(cls, batch, num_layers, channels, gamma=1.0, beta=0.0):
        """Fixed parameters, e.g. the identity transform gamma=1, beta=0."""
        shape = (batch, num_layers * channels)
        return cls(Tensor(np.full(shape, float(gamma))), Tensor(np.full(shape, float(beta))),
                   num_layers, channels)


class FilmGenerator(Module):
    def __init__(self, num_languages, num_layers, channels, rng, hidden=32):
        self.num_layers = int(num_layers)
        self.channels = int(channels)
        self.code_proj = LinearLayer(num_languages, hidden, rng)      # W_d, b_d
        self.context = LinearLayer(hidden, hidden, rng)               # W_c, b_c
        self.gamma_head = LinearLayer(hidden, num_layers * channels, rng)
        self.beta_head = LinearLayer(hidden, num_layers * channels, rng)
        # start near the identity transform: gamma ~ GAMMA_INIT, small spread
        self.gamma_head.weight.assign(self.gamma_head.weight.data * 0.1)
        self.gamma_head.bias.assign(np.full(num_layers * channels, np.arctanh(GAMMA_INIT)))

    @property
    def num_languages(self):
        return self.code_proj.weight.shape[1]


def generate_film_params(gen, codes):
    """All layers' (gamma, beta) from one generator pass; ``codes`` is ``[B, D]`` or LanguageCode(s)."""
    d = codes if isinstance(codes, Tensor) else Tensor(codes_matrix(codes))
    if d.ndim != 2 or d.shape[1] != gen.num_languages:
        raise ShapeError(f"generator expects codes of dimension {gen.num_languages}, got {d.shape}")
    a = tanh(gen.context(tanh(gen.code_proj(d))))
    return FilmParams(tanh(gen.gamma_head(a)), tanh(gen.beta_head(a)),
                      gen.num_layers, gen.channels)


def _per_channel(v, x):
    """Lift a ``[C]`` or ``[B, C]`` vector so it broadcasts over ``[B, T, C]``."""
    v = as_tensor(v)
    C = x.shape[-1]
    if v.shape[-1] != C:
        raise ShapeError(f"conditioning vector has {v.shape[-1]} channels, features have {C}")
    if v.ndim == 1:
        return v
    if v.ndim == 2:
        if v.shape[0] != x.shape[0]:
            raise ShapeError(f"batch {v.shape[0]} does not match features batch {x.shape[0]}")
        return reshape(v, (v.shape[0], 1, C))
    raise ShapeError(f"conditioning vector must be [C] or [B, C], got {v.shape}")


def film_apply(x, gamma, beta):
    """``gamma * x + beta`` with per-channel vectors shared across frames."""
    if x.ndim != 3:
        raise ShapeError(f"film_apply expects [B, T, C], got {x.shape}")
    return add(mul(_per_channel(gamma, x), x), _per_channel(beta, x))


# --------------------------------------------------------------------------
# squeeze-and-excitation
# --------------------------------------------------------------------------

class SeBlock(Module):
    def __init__(self, channels, rng, reduction=8):
        if reduction < 1 or channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels = int(channels)
        self.reduction = int(reduction)
        self.squeeze = LinearLayer(channels, channels // reduction, rng)   # W1, b1
        self.excite = LinearLayer(channels // reduction, channels, rng)    # W2, b2
        # open gates at init so stacked blocks do not shrink the signal
        self.excite.bias.assign(np.full(channels, SE_GATE_BIAS_INIT))


def masked_time_mean(x, lengths=None):
    """Mean over valid frames of ``[B, T, C]`` -> ``[B, C]``."""
    B, T, C = x.shape
    if T == 0:
        raise ShapeError("cannot average over zero frames")
    if lengths is None:
        return reduce("mean", x, axis=1)
    lengths = np.asarray(lengths)
    if (lengths < 1).any():
        raise ShapeError("every sequence needs at least one frame")
    weights = length_mask(lengths, T) / lengths[:, None]
    return reduce("sum", mul(x, Tensor(weights[:, :, None])), axis=1)


def se_gate(block, x, lengths=None):
    """Channel gate ``theta`` in (0, 1), ``[B, C]``."""
    if x.ndim != 3 or x.shape[-1] != block.channels:
        raise ShapeError(f"SE block expects [B, T, {block.channels}], got {x.shape}")
    pooled = masked_time_mean(x, lengths)
    return sigmoid(block.excite(relu(block.squeeze(pooled))))


def se_apply(block, x, lengths=None):
    theta = se_gate(block, x, lengths)
    return mul(x, reshape(theta, (x.shape[0], 1, x.shape[2])))


def slil_apply(gamma, beta, block, x, lengths=None):
    """FiLM first, then SE."""
    return se_apply(block, film_apply(x, gamma, beta), lengths)


def se_film_apply(gamma, beta, block, x, lengths=None):
    """SE first, then FiLM (the reversed ablation variant)."""
    return film_apply(se_apply(block, x, lengths), gamma, beta)


def append_onehot(x, code):
    """Concatenate the language code to every frame: ``[B, T, C] -> [B, T, C + D]``."""
    if x.ndim != 3:
        raise ShapeError(f"append_onehot expects [B, T, C], got {x.shape}")
    B, T, _ = x.shape
    codes = codes_matrix(code)
    if codes.shape[0] == 1 and B > 1:
        codes = np.repeat(codes, B, axis=0)
    if codes.shape[0] != B:
        raise ShapeError(f"{codes.shape[0]} codes for a batch of {B}")
    for row in codes:
        LanguageCode(tuple(row))  # validates one-hot
    lifted = broadcast_to(Tensor(codes[:, None, :]), (B, T, codes.shape[1]))
    return concat([x, lifted], axis=-1)
