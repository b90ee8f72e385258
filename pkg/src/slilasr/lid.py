"""Stage one: sentence-level language identifier.

Three conv layers and five bidirectional GRU layers, mean-pooled over valid
frames, then a linear layer to language log-probabilities. At inference the
argmax is emitted as a hard one-hot :class:`LanguageCode`.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .batching import collate, epoch_order, eval_batches, minibatches
from .conditioning import LANGUAGES, LanguageCode, masked_time_mean
from .layers import (
    BatchNorm1d,
    Conv1dLayer,
    Dropout,
    LinearLayer,
    Module,
    RecurrentLayer,
    length_mask,
)
from .losses import ce_loss
from .optim import Adam
from .tensor import ShapeError, Tape, Tensor, backward, log_softmax, relu, transpose

NUM_CONV = 3
NUM_RNN = 5


@dataclass
class LidConfig:
    n_features: int = 16
    num_languages: int = len(LANGUAGES)
    conv_channels: int = 32
    kernel_width: int = 3
    conv_stride: int = 1
    hidden: int = 64
    dropout: float = 0.1
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    clip_norm: float = 5.0

    def to_dict(self):
        return asdict(self)


class LidModel(Module):
    def __init__(self, config, rng=None):
        self.config = config
        rng = np.random.default_rng([config.seed, 1]) if rng is None else rng
        c = config
        chans = [c.n_features] + [c.conv_channels] * NUM_CONV
        self.convs = [Conv1dLayer(chans[i], chans[i + 1], c.kernel_width, c.conv_stride, rng)
                      for i in range(NUM_CONV)]
        self.norms = [BatchNorm1d(c.conv_channels) for _ in range(NUM_CONV)]
        sizes = [c.conv_channels] + [2 * c.hidden] * NUM_RNN
        self.rnns = [RecurrentLayer(sizes[i], c.hidden, rng) for i in range(NUM_RNN)]
        self.classifier = LinearLayer(2 * c.hidden, c.num_languages, rng)
        self.drop = Dropout(c.dropout, np.random.default_rng([c.seed, 2]))

    def out_lengths(self, lengths):
        lengths = np.asarray(lengths)
        for conv in self.convs:
            lengths = conv.out_length(lengths)
        return lengths

    def min_frames(self):
        T = 1
        for conv in reversed(self.convs):
            T = (T - 1) * conv.stride + conv.kernel_width
        return T


def lid_forward(model, features, lengths=None):
    """Language log-probabilities ``[B, D]`` for padded features ``[B, T, F]``."""
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim != 3:
        raise ShapeError(f"lid_forward expects [B, T, F], got {x.shape}")
    B, T, _ = x.shape
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    if lengths.min() < model.min_frames():
        raise ShapeError(f"input too short: need at least {model.min_frames()} frames")
    h = transpose(x, (0, 2, 1))
    for conv, norm in zip(model.convs, model.norms):
        h = conv(h)
        lengths = conv.out_length(lengths)
        h = transpose(h, (0, 2, 1))
        h = model.drop(relu(norm(h, mask=length_mask(lengths, h.shape[1]))))
        h = transpose(h, (0, 2, 1))
    h = transpose(h, (0, 2, 1))
    for i, rnn in enumerate(model.rnns):
        h = rnn(h, lengths)
        if i < len(model.rnns) - 1:
            h = model.drop(h)
    pooled = masked_time_mean(h, lengths)
    return log_softmax(model.classifier(pooled), axis=-1)


def codes_from_log_probs(log_probs):
    """Hard one-hot codes; exact ties go to the lowest class index."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    lp = np.atleast_2d(lp)
    return [LanguageCode.from_index(int(i), lp.shape[1]) for i in np.argmax(lp, axis=1)]


def lid_predict(model, features, lengths=None):
    """One-hot code per utterance. ``[T, F]`` input gives a single code."""
    single = np.ndim(features) == 2
    feats = np.asarray(features)[None] if single else features
    was_training = model.training
    model.eval()
    try:
        codes = codes_from_log_probs(lid_forward(model, feats, lengths))
    finally:
        model.train(was_training)
    return codes[0] if single else codes


def predict_corpus(model, utterances, batch_size=64):
    """Codes for a list of utterances, in input order."""
    codes = [None] * len(utterances)
    for idx in eval_batches(utterances, batch_size):
        feats, lens = collate([utterances[i] for i in idx])
        for i, code in zip(idx, lid_predict(model, feats, lens)):
            codes[i] = code
    return codes


def evaluate_lid(model, utterances, batch_size=64):
    """(mean CE, accuracy) with the model in eval mode."""
    was_training = model.training
    model.eval()
    total, correct = 0.0, 0
    try:
        for idx in eval_batches(utterances, batch_size):
            batch = [utterances[i] for i in idx]
            feats, lens = collate(batch)
            targets = np.array([LANGUAGES.index(u.label) for u in batch])
            lp = lid_forward(model, feats, lens)
            total += ce_loss(lp, targets).item() * len(batch)
            correct += int((np.argmax(lp.data, axis=1) == targets).sum())
    finally:
        model.train(was_training)
    return total / len(utterances), correct / len(utterances)


def lid_train(model, train, dev, config=None, log=None):
    """Train with CE and Adam; keep the parameters of the best dev epoch.

    Returns a list of per-epoch records. Epoch 0 is the untrained model.
    """
    config = config or model.config
    if not train:
        raise ValueError("cannot train on an empty corpus")
    dev = dev or train
    opt = Adam(model.parameters(), lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng([config.seed, 3])
    dev_ce, dev_acc = evaluate_lid(model, dev)
    history = [{"epoch": 0, "train_ce": None, "dev_ce": dev_ce, "dev_acc": dev_acc}]
    best = (dev_acc, -dev_ce)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        losses = []
        for idx in minibatches(epoch_order(train, epoch, rng), config.batch_size):
            batch = [train[i] for i in idx]
            feats, lens = collate(batch)
            targets = np.array([LANGUAGES.index(u.label) for u in batch])
            opt.zero_grad()
            with Tape():
                loss = ce_loss(lid_forward(model, feats, lens), targets)
            backward(loss)
            opt.step()
            losses.append(loss.item())
        dev_ce, dev_acc = evaluate_lid(model, dev)
        rec = {"epoch": epoch, "train_ce": float(np.mean(losses)), "dev_ce": dev_ce,
               "dev_acc": dev_acc}
        history.append(rec)
        if log is not None:
            log(rec)
        if (dev_acc, -dev_ce) > best:
            best = (dev_acc, -dev_ce)
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            best_epoch = epoch
    model.load_state_dict(best_state)
    model.eval()
    for rec in history:
        rec["best"] = rec["epoch"] == best_epoch
    return history
