"""Stage two: CNN + bidirectional GRU CTC encoder with language conditioning.

The conditioning block sits before or after every recurrent encoder layer.
Its kind is one of:

* ``none``   : plain backbone, the language code is ignored
* ``append`` : the one-hot code is concatenated to every encoder layer input
* ``film``   : FiLM only
* ``slil``   : SE(FiLM(x))
* ``se_film``: FiLM(SE(x))

FiLM parameters for all layers come from one generator pass per utterance;
layer ``i`` uses slice ``i``.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .batching import collate, epoch_order, eval_batches, minibatches
from .conditioning import (
    LANGUAGES,
    ConditioningConfig,
    FilmGenerator,
    LanguageCode,
    SeBlock,
    append_onehot,
    codes_matrix,
    film_apply,
    generate_film_params,
    se_film_apply,
    slil_apply,
)
from .layers import (
    BatchNorm1d,
    Conv1dLayer,
    Dropout,
    LinearLayer,
    Module,
    RecurrentLayer,
    length_mask,
)
from .lid import lid_predict, predict_corpus
from .losses import ctc_loss_batch, edit_distance, greedy_decode
from .optim import Adam
from .tensor import ShapeError, Tape, Tensor, backward, log_softmax, relu, transpose

# named ablation variants: (mode, position)
VARIANTS = {
    "M1": ("film", "before"),
    "M2": ("film", "after"),
    "M3": ("slil", "before"),
    "M4": ("se_film", "before"),
    "M5": ("slil", "after"),
    "M6": ("se_film", "after"),
}


class MissingCodeError(ValueError):
    pass


@dataclass
class AsrConfig:
    n_features: int = 16
    vocab_size: int = 14
    num_languages: int = len(LANGUAGES)
    conv_layers: int = 2
    conv_channels: int = 0          # 0 -> 2 * hidden, so every insertion point has the same width
    kernel_width: int = 3
    conv_stride: int = 1
    hidden: int = 64
    layers: int = 3
    dropout: float = 0.1
    mode: str = "none"
    position: str = "before"
    se_reduction: int = 8
    film_hidden: int = 32
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 40
    patience: int = 8
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        ConditioningConfig(self.mode, self.position)
        if self.layers < 1 or self.conv_layers < 0:
            raise ValueError("need at least one encoder layer")
        if self.conv_channels == 0:
            self.conv_channels = 2 * self.hidden

    @property
    def conditioning(self):
        return ConditioningConfig(self.mode, self.position)

    @property
    def block_channels(self):
        return 2 * self.hidden

    def to_dict(self):
        return asdict(self)


class AsrModel(Module):
    def __init__(self, config, rng=None):
        c = config
        self.config = c
        rng = np.random.default_rng([c.seed, 11]) if rng is None else rng
        cond = c.conditioning
        width = c.block_channels
        if cond.uses_film and c.position == "before" and c.conv_layers and c.conv_channels != width:
            raise ValueError("FiLM before the first encoder layer needs conv_channels == 2 * hidden")
        chans = [c.n_features] + [c.conv_channels] * c.conv_layers
        self.convs = [Conv1dLayer(chans[i], chans[i + 1], c.kernel_width, c.conv_stride, rng)
                      for i in range(c.conv_layers)]
        self.norms = [BatchNorm1d(c.conv_channels) for _ in range(c.conv_layers)]
        extra = c.num_languages if c.mode == "append" else 0
        sizes = [chans[-1]] + [width] * (c.layers - 1)
        self.rnns = [RecurrentLayer(sizes[i] + extra, c.hidden, rng) for i in range(c.layers)]
        if cond.uses_film:
            self.film = FilmGenerator(c.num_languages, c.layers, width, rng, hidden=c.film_hidden)
        if cond.uses_se:
            self.se = [SeBlock(width, rng, reduction=c.se_reduction) for _ in range(c.layers)]
        self.output = LinearLayer(width, c.vocab_size, rng)
        self.drop = Dropout(c.dropout, np.random.default_rng([c.seed, 12]))

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


def expected_param_count(config):
    """Closed-form parameter count for a model built from ``config``."""
    c = AsrConfig(**config.to_dict()) if isinstance(config, AsrConfig) else AsrConfig(**config)
    n = 0
    cin = c.n_features
    for _ in range(c.conv_layers):
        n += c.conv_channels * cin * c.kernel_width + c.conv_channels  # conv
        n += 2 * c.conv_channels                                        # batch norm
        cin = c.conv_channels
    H, W, L, D = c.hidden, c.block_channels, c.layers, c.num_languages
    extra = D if c.mode == "append" else 0
    for i in range(L):
        inp = (cin if i == 0 else W) + extra
        n += 2 * (inp * 3 * H + 3 * H + H * 3 * H + 3 * H)
    if c.mode in ("film", "slil", "se_film"):
        h = c.film_hidden
        n += D * h + h + h * h + h + 2 * (h * L * W + L * W)
    if c.mode in ("slil", "se_film"):
        r = W // c.se_reduction
        n += L * (W * r + r + r * W + W)
    n += W * c.vocab_size + c.vocab_size
    return n


def _apply_block(model, params, i, x, lengths):
    mode = model.config.mode
    gamma, beta = params.layer(i)
    if mode == "film":
        return film_apply(x, gamma, beta)
    if mode == "slil":
        return slil_apply(gamma, beta, model.se[i], x, lengths)
    return se_film_apply(gamma, beta, model.se[i], x, lengths)


def asr_forward(model, features, codes=None, lengths=None, film_override=None):
    """Frame log-probabilities ``[B, T', V]``.

    ``codes`` are LanguageCodes (or a ``[B, D]`` array) and are required for
    every mode except ``none``. ``film_override`` replaces the generator output
    with fixed FilmParams.
    """
    c = model.config
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim != 3 or x.shape[2] != c.n_features:
        raise ShapeError(f"asr_forward expects [B, T, {c.n_features}], got {x.shape}")
    B, T, _ = x.shape
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    if lengths.min() < model.min_frames():
        raise ShapeError(f"input too short: need at least {model.min_frames()} frames")
    cond = c.conditioning
    code_mat = None
    if cond.needs_code:
        if codes is None:
            raise MissingCodeError(f"mode {c.mode!r} needs a language code")
        code_mat = codes_matrix(codes)
        if code_mat.shape[0] == 1 and B > 1:
            code_mat = np.repeat(code_mat, B, axis=0)
        if code_mat.shape != (B, c.num_languages):
            raise ShapeError(f"expected {B} codes of dimension {c.num_languages}, got {code_mat.shape}")

    h = x
    if model.convs:
        h = transpose(h, (0, 2, 1))
        for conv, norm in zip(model.convs, model.norms):
            h = conv(h)
            lengths = conv.out_length(lengths)
            h = transpose(h, (0, 2, 1))
            h = model.drop(relu(norm(h, mask=length_mask(lengths, h.shape[1]))))
            h = transpose(h, (0, 2, 1))
        h = transpose(h, (0, 2, 1))

    params = None
    if cond.uses_film:
        params = film_override if film_override is not None else generate_film_params(model.film, code_mat)
    for i, rnn in enumerate(model.rnns):
        if c.mode == "append":
            h = append_onehot(h, code_mat)
        if params is not None and c.position == "before":
            h = _apply_block(model, params, i, h, lengths)
        h = rnn(h, lengths)
        if params is not None and c.position == "after":
            h = _apply_block(model, params, i, h, lengths)
        h = model.drop(h)
    return log_softmax(model.output(h), axis=-1)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class CerReport:
    """Edit and reference-token totals, overall and per language."""

    edits: dict = field(default_factory=lambda: {k: 0 for k in LANGUAGES})
    tokens: dict = field(default_factory=lambda: {k: 0 for k in LANGUAGES})
    utterances: dict = field(default_factory=lambda: {k: 0 for k in LANGUAGES})

    def add(self, label, hyp, ref):
        if len(ref) == 0:
            raise ValueError("reference must contain at least one token")
        self.edits[label] += edit_distance(hyp, ref)
        self.tokens[label] += len(ref)
        self.utterances[label] += 1

    @property
    def cer(self):
        n = sum(self.tokens.values())
        return sum(self.edits.values()) / n if n else float("nan")

    def language_cer(self, label):
        n = self.tokens[label]
        return self.edits[label] / n if n else float("nan")

    def to_dict(self):
        return {
            "cer": self.cer,
            "edits": dict(self.edits),
            "tokens": dict(self.tokens),
            "utterances": dict(self.utterances),
            "per_language": {k: self.language_cer(k) for k in LANGUAGES},
        }


def utterance_codes(model, utterances, lid=None, oracle_codes=False):
    """Per-utterance language codes for stage two (None when unconditioned)."""
    if not model.config.conditioning.needs_code:
        return None
    if oracle_codes:
        return [LanguageCode.from_label(u.label) for u in utterances]
    if lid is None:
        raise MissingCodeError(
            f"mode {model.config.mode!r} needs a trained language identifier (stage-one checkpoint)")
    return predict_corpus(lid, utterances)


def decode_batch(model, utterances, codes=None):
    feats, lens = collate(utterances)
    lp = asr_forward(model, feats, codes, lens)
    out_lens = model.out_lengths(lens)
    return [greedy_decode(lp.data[b, :out_lens[b]]) for b in range(len(utterances))]


def evaluate_asr(model, utterances, codes=None, batch_size=64):
    """Greedy-decode every utterance and tally CER (model run in eval mode)."""
    was_training = model.training
    model.eval()
    report = CerReport()
    try:
        for idx in eval_batches(utterances, batch_size):
            batch = [utterances[i] for i in idx]
            batch_codes = None if codes is None else [codes[i] for i in idx]
            for u, hyp in zip(batch, decode_batch(model, batch, batch_codes)):
                report.add(u.label, hyp, list(u.tokens))
    finally:
        model.train(was_training)
    return report


def transcribe(model, features, lid=None, lengths=None):
    """LID code -> conditioned forward -> greedy decode. ``[T, F]`` gives one sequence."""
    single = np.ndim(features) == 2
    feats = np.asarray(features)[None] if single else np.asarray(features)
    B, T, _ = feats.shape
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    codes = None
    if model.config.conditioning.needs_code:
        if lid is None:
            raise MissingCodeError(f"mode {model.config.mode!r} needs a language identifier")
        codes = lid_predict(lid, feats, lengths)
    was_training = model.training
    model.eval()
    try:
        lp = asr_forward(model, feats, codes, lengths)
    finally:
        model.train(was_training)
    out_lens = model.out_lengths(lengths)
    hyps = [greedy_decode(lp.data[b, :out_lens[b]]) for b in range(B)]
    return hyps[0] if single else hyps


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def asr_train(model, train, dev, lid=None, config=None, oracle_codes=False, log=None):
    """CTC training with Adam; restores the parameters of the best dev-CER epoch.

    Language codes come from the frozen ``lid`` (predicted once per utterance,
    since the identifier never changes during this stage).
    """
    config = config or model.config
    if not train:
        raise ValueError("cannot train on an empty corpus")
    dev = dev or train
    train_codes = utterance_codes(model, train, lid, oracle_codes)
    dev_codes = utterance_codes(model, dev, lid, oracle_codes)
    opt = Adam(model.parameters(), lr=config.lr, clip_norm=config.clip_norm)
    rng = np.random.default_rng([config.seed, 13])
    best_cer = evaluate_asr(model, dev, dev_codes).cer
    history = [{"epoch": 0, "train_loss": None, "dev_cer": best_cer}]
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    best_epoch, stale = 0, 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        losses = []
        for idx in minibatches(epoch_order(train, epoch, rng), config.batch_size):
            batch = [train[i] for i in idx]
            feats, lens = collate(batch)
            codes = None if train_codes is None else [train_codes[i] for i in idx]
            opt.zero_grad()
            with Tape():
                lp = asr_forward(model, feats, codes, lens)
                loss = ctc_loss_batch(lp, model.out_lengths(lens), [u.tokens for u in batch])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite CTC loss in epoch {epoch}")
            backward(loss)
            opt.step()
            losses.append(loss.item())
        dev_cer = evaluate_asr(model, dev, dev_codes).cer
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "dev_cer": dev_cer}
        history.append(rec)
        if log is not None:
            log(rec)
        if dev_cer < best_cer:
            best_cer, best_epoch, stale = dev_cer, epoch, 0
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    for rec in history:
        rec["best"] = rec["epoch"] == best_epoch
    return history
