"""Cross-entropy, CTC, greedy CTC decoding and character error rate."""
import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .tensor import Tensor, make_op, mul, reduce

BLANK = 0
BLANK_TOKEN = "<blank>"
UNK_TOKEN = "<unk>"


class InfeasibleTargetError(ValueError):
    """The target cannot be aligned to the available number of frames."""


@dataclass
class Vocabulary:
    """Token inventory with ``<blank>`` at index 0 and ``<unk>`` at index 1."""

    tokens: list
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.tokens[:2]) != [BLANK_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with <blank>, <unk>")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_symbols(cls, symbols):
        return cls([BLANK_TOKEN, UNK_TOKEN, *symbols])

    def __len__(self):
        return len(self.tokens)

    def encode(self, symbols):
        unk = self.index[UNK_TOKEN]
        return [self.index.get(s, unk) for s in symbols]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


def ce_loss(pred_log_probs, targets):
    """Mean negative log-likelihood of ``targets`` under row-wise log-probs ``[B, D]``."""
    lp = pred_log_probs.data
    if lp.ndim != 2:
        raise ValueError(f"ce_loss expects [B, D] log-probs, got {lp.shape}")
    B, D = lp.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (B,):
        raise ValueError(f"expected {B} targets, got shape {targets.shape}")
    if ((targets < 0) | (targets >= D)).any():
        raise ValueError(f"class index out of range [0, {D})")
    if np.abs(np.exp(lp).sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("rows of exp(pred_log_probs) must sum to 1")
    onehot = np.zeros((B, D))
    onehot[np.arange(B), targets] = -1.0 / B
    return reduce("sum", mul(pred_log_probs, Tensor(onehot)))


# --------------------------------------------------------------------------
# CTC
# --------------------------------------------------------------------------

def ctc_min_frames(target):
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check_target(target, T, V):
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if target.size and ((target <= BLANK) | (target >= V)).any():
        raise ValueError(f"target labels must lie in [1, {V}); blank is reserved")
    need = ctc_min_frames(target)
    if need > T:
        raise InfeasibleTargetError(f"target needs {need} frames but only {T} are available")
    return target


def ctc_loss(log_probs, target):
    """``-log p(target | x)`` summed over all alignments, for ``log_probs`` ``[T, V]``."""
    if log_probs.ndim != 2:
        raise ValueError(f"ctc_loss expects [T, V], got {log_probs.shape}")
    T, V = log_probs.shape
    target = _check_target(target, T, V)
    loss, grad = kernels.ctc_lattice(np.ascontiguousarray(log_probs.data), target)
    return make_op(np.array(loss), (log_probs,), lambda g: (g * grad,))


def ctc_loss_batch(log_probs, lengths, targets):
    """Batch-mean CTC loss for padded ``log_probs`` ``[B, T, V]``."""
    B, T, V = log_probs.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    data = log_probs.data
    total = 0.0
    grad = np.zeros_like(data)
    for b in range(B):
        n = int(lengths[b])
        target = _check_target(targets[b], n, V)
        loss, g = kernels.ctc_lattice(np.ascontiguousarray(data[b, :n]), target)
        total += loss
        grad[b, :n] = g
    grad /= B
    return make_op(np.array(total / B), (log_probs,), lambda g: (g * grad,))


def ctc_bruteforce(log_probs, target):
    """Exact ``-log p`` by enumerating all ``V**T`` paths (tiny instances only)."""
    lp = np.asarray(log_probs.data if isinstance(log_probs, Tensor) else log_probs)
    T, V = lp.shape
    target = tuple(int(t) for t in target)
    terms = []
    for path in itertools.product(range(V), repeat=T):
        if tuple(ctc_collapse(path)) == target:
            terms.append(lp[np.arange(T), list(path)].sum())
    if not terms:
        return np.inf
    return -np.logaddexp.reduce(np.array(terms))


def ctc_collapse(path, blank=BLANK):
    """Merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for tok in path:
        tok = int(tok)
        if tok != prev and tok != blank:
            out.append(tok)
        prev = tok
    return out


def greedy_decode(log_probs):
    """Best-path decoding: per-frame argmax (lowest index on ties) then collapse."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return ctc_collapse(np.argmax(lp, axis=-1))


# --------------------------------------------------------------------------
# error rate
# --------------------------------------------------------------------------

def edit_distance(a, b):
    """Levenshtein distance with unit substitution, deletion and insertion costs."""
    return int(kernels.edit_distance_kernel(np.asarray(a, dtype=np.int64),
                                            np.asarray(b, dtype=np.int64)))


def cer(hypothesis, reference):
    """``(S + D + I) / N`` as an exact fraction, ``N = len(reference)``."""
    if len(reference) == 0:
        raise ValueError("reference must contain at least one token")
    return Fraction(edit_distance(hypothesis, reference), len(reference))


def corpus_cer(pairs):
    """Micro-averaged CER over ``(hypothesis, reference)`` pairs: total edits / total N."""
    edits = 0
    n = 0
    for hyp, ref in pairs:
        if len(ref) == 0:
            raise ValueError("reference must contain at least one token")
        edits += edit_distance(hyp, ref)
        n += len(ref)
    if n == 0:
        raise ValueError("no references to score")
    return edits / n
