"""Synthetic three-language corpus and the binary feature-file format.

Every token has a base template (a length-F vector). Language A renders all of
its tokens with the base template. Language B renders its exclusive tokens the
same way, but passes shared tokens through a fixed orthogonal affine map that
cyclically permutes the shared templates: shared token ``S1`` spoken in B
sounds exactly like ``S2`` spoken in A, and so on. A frame-level decoder that
does not know the language therefore cannot resolve shared tokens, while one
that does can. Exclusive tokens make the language of every utterance
identifiable.

Feature file layout (all integers little-endian)::

    magic      8 bytes  b"SLILFEAT"
    version    uint16   currently 1
    count      uint32   number of utterances
    per utterance:
        tag        1 byte   b"A", b"B" or b"M" (MIXED)
        n_tokens   uint16
        tokens     n_tokens x uint16 vocabulary indices
        T          uint32   frames
        F          uint32   features per frame
        features   T*F x float32, row-major
"""
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .conditioning import LANGUAGES
from .losses import Vocabulary

MAGIC = b"SLILFEAT"
FORMAT_VERSION = 1
TAGS = {"A": b"A", "B": b"B", "MIXED": b"M"}
TAG_TO_LABEL = {v: k for k, v in TAGS.items()}

SPLITS = ("train", "dev", "test")
DEFAULT_COUNTS = {
    "train": {"A": 282, "B": 156, "MIXED": 162},
    "dev": {"A": 56, "B": 31, "MIXED": 33},
    "test": {"A": 56, "B": 31, "MIXED": 33},
}


class FeatureFileError(ValueError):
    pass


@dataclass
class Utterance:
    features: np.ndarray          # [T, F]
    tokens: tuple                 # vocabulary indices
    label: str                    # "A", "B" or "MIXED"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.tokens = tuple(int(t) for t in self.tokens)
        if self.label not in LANGUAGES:
            raise ValueError(f"unknown language label {self.label!r}")
        if self.features.ndim != 2:
            raise ValueError(f"features must be [T, F], got {self.features.shape}")

    @property
    def duration(self):
        return self.features.shape[0]

    def __eq__(self, other):
        return (isinstance(other, Utterance) and self.label == other.label
                and self.tokens == other.tokens
                and np.array_equal(self.features, other.features))


@dataclass
class LanguageSpec:
    name: str
    tokens: tuple                 # vocabulary indices usable in this language
    matrix: np.ndarray            # affine map applied to shared-token templates
    offset: np.ndarray


@dataclass
class CorpusConfig:
    seed: int = 0
    n_features: int = 16
    frames_per_token: int = 4
    noise: float = 0.3
    min_tokens: int = 3
    max_tokens: int = 12
    n_exclusive: int = 4
    n_shared: int = 4
    template_scale: float = 1.0
    shared_radius: float = 3.0
    counts: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_COUNTS.items()})

    def validate(self):
        if not 2 <= self.min_tokens <= self.max_tokens <= 20:
            raise ValueError("token length range must lie within [2, 20]")
        if self.n_shared < 2 or self.n_exclusive < 1:
            raise ValueError("need at least 2 shared and 1 exclusive token per language")
        if self.n_shared > self.n_features:
            raise ValueError("n_shared cannot exceed n_features")
        for split in SPLITS:
            counts = self.counts.get(split)
            if counts is None or set(counts) != set(LANGUAGES):
                raise ValueError(f"counts for split {split!r} must name exactly {LANGUAGES}")
            if any(int(c) < 1 for c in counts.values()):
                raise ValueError(f"counts for split {split!r} must all be >= 1")


@dataclass
class CorpusDesign:
    """The token inventory, templates and per-language renderings."""

    vocab: Vocabulary
    templates: np.ndarray         # [V, F]; rows 0, 1 (blank, unk) unused
    exclusive: dict               # language -> tuple of indices
    shared: tuple
    languages: dict               # "A"/"B" -> LanguageSpec

    def render(self, token, language):
        spec = self.languages[language]
        t = self.templates[token]
        if token in self.shared:
            return spec.matrix @ t + spec.offset
        return t

    def min_separation(self):
        rows = self.templates[2:]
        d = np.linalg.norm(rows[:, None, :] - rows[None, :, :], axis=-1)
        return d[np.triu_indices(len(rows), 1)].min()


@dataclass
class CorpusSplit:
    train: list
    dev: list
    test: list
    seed: int
    design: CorpusDesign = field(repr=False)

    def split(self, name):
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def counts(self):
        return {s: {lang: sum(u.label == lang for u in self.split(s)) for lang in LANGUAGES}
                for s in SPLITS}


def build_design(config):
    """Templates and language transforms, deterministic in ``config.seed``."""
    rng = np.random.default_rng([config.seed, 0xD5])
    F = config.n_features
    n_ex, n_sh = config.n_exclusive, config.n_shared
    vocab = Vocabulary.from_symbols(
        [f"A{i + 1}" for i in range(n_ex)] + [f"B{i + 1}" for i in range(n_ex)]
        + [f"S{i + 1}" for i in range(n_sh)])
    a_idx = tuple(range(2, 2 + n_ex))
    b_idx = tuple(range(2 + n_ex, 2 + 2 * n_ex))
    s_idx = tuple(range(2 + 2 * n_ex, 2 + 2 * n_ex + n_sh))
    min_sep = max(4.0 * config.noise, 1.0)
    for _ in range(1000):
        centre = rng.normal(size=F) * config.template_scale
        q, _r = np.linalg.qr(rng.normal(size=(F, n_sh)))
        templates = np.zeros((len(vocab), F))
        templates[list(a_idx + b_idx)] = rng.normal(size=(2 * n_ex, F)) * config.template_scale
        templates[list(s_idx)] = centre + config.shared_radius * q.T
        design = CorpusDesign(vocab, templates, {"A": a_idx, "B": b_idx}, s_idx, {})
        if design.min_separation() >= min_sep:
            break
    else:  # pragma: no cover - astronomically unlikely with sane settings
        raise RuntimeError("could not draw well-separated templates")
    # B's map rotates shared template i onto shared template i+1 and leaves
    # the orthogonal complement alone
    perm = np.roll(np.eye(n_sh), 1, axis=0)
    rot = np.eye(F) - q @ q.T + q @ perm @ q.T
    design.languages = {
        "A": LanguageSpec("A", a_idx + s_idx, np.eye(F), np.zeros(F)),
        "B": LanguageSpec("B", b_idx + s_idx, rot, centre - rot @ centre),
    }
    return design


def _sample_transcript(rng, design, label, length):
    """Token list plus the language each token is spoken in."""
    while True:
        if label in ("A", "B"):
            pool = design.languages[label].tokens
            toks = [int(t) for t in rng.choice(pool, size=length)]
            langs = [label] * length
            if any(t in design.exclusive[label] for t in toks):
                return toks, langs
            continue
        toks, langs = [], []
        lang = "A" if rng.random() < 0.5 else "B"
        while len(toks) < length:
            run = min(int(rng.integers(1, 4)), length - len(toks))
            pool = design.languages[lang].tokens
            toks.extend(int(t) for t in rng.choice(pool, size=run))
            langs.extend([lang] * run)
            lang = "B" if lang == "A" else "A"
        if (any(t in design.exclusive["A"] for t in toks)
                and any(t in design.exclusive["B"] for t in toks)):
            return toks, langs


def render_utterance(design, tokens, languages, frames_per_token, noise, rng):
    frames = [np.tile(design.render(t, lang), (frames_per_token, 1))
              for t, lang in zip(tokens, languages)]
    feats = np.concatenate(frames, axis=0)
    if noise > 0:
        feats = feats + rng.normal(scale=noise, size=feats.shape)
    # stored on disk as float32; keep the in-memory copy identical
    return feats.astype(np.float32).astype(np.float64)


def generate_corpus(config=None, noise=None):
    """Deterministic train/dev/test corpus.

    Each utterance draws from its own generator seeded by (seed, split,
    language, index, attempt), so utterances can be produced independently.
    Dev/test utterances whose (transcript, label) already occurs in an earlier
    split are redrawn.
    """
    config = config or CorpusConfig()
    config.validate()
    design = build_design(config)
    sigma = config.noise if noise is None else noise
    seen = set()
    splits = {}
    for s_i, split in enumerate(SPLITS):
        utts = []
        keys = []
        for l_i, label in enumerate(LANGUAGES):
            for idx in range(int(config.counts[split][label])):
                attempt = 0
                while True:
                    rng = np.random.default_rng([config.seed, s_i, l_i, idx, attempt])
                    length = int(rng.integers(config.min_tokens, config.max_tokens + 1))
                    toks, langs = _sample_transcript(rng, design, label, length)
                    key = (tuple(toks), label)
                    if split == "train" or key not in seen:
                        break
                    attempt += 1
                feats = render_utterance(design, toks, langs, config.frames_per_token, sigma, rng)
                utts.append(Utterance(feats, toks, label))
                keys.append(key)
        seen.update(keys)
        splits[split] = utts
    return CorpusSplit(splits["train"], splits["dev"], splits["test"], config.seed, design)


# --------------------------------------------------------------------------
# feature files
# --------------------------------------------------------------------------

def encode_features(utterances):
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(utterances))]
    for u in utterances:
        T, F = u.features.shape
        parts.append(TAGS[u.label])
        parts.append(struct.pack(f"<H{len(u.tokens)}H", len(u.tokens), *u.tokens))
        parts.append(struct.pack("<II", T, F))
        parts.append(np.ascontiguousarray(u.features, dtype="<f4").tobytes())
    return b"".join(parts)


def write_features(path, utterances, overwrite=False):
    mode = "wb" if overwrite else "xb"
    with open(path, mode) as fh:
        fh.write(encode_features(utterances))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FeatureFileError(
                f"truncated file: need {n} bytes for {what} at byte offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_features(buf):
    r = _Reader(bytes(buf))
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FeatureFileError("malformed header: bad magic string at byte offset 0")
    version, count = r.unpack("<HI", "header")
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"malformed header: unsupported format version {version}")
    utts = []
    for i in range(count):
        start = r.pos
        tag = r.take(1, f"utterance {i} language tag")
        if tag not in TAG_TO_LABEL:
            raise FeatureFileError(
                f"unknown language tag {tag!r} for utterance {i} at byte offset {start}")
        (n_tok,) = r.unpack("<H", f"utterance {i} transcript length")
        tokens = r.unpack(f"<{n_tok}H", f"utterance {i} tokens")
        T, F = r.unpack("<II", f"utterance {i} shape")
        if T == 0 or F == 0:
            raise FeatureFileError(f"shape mismatch: utterance {i} has T={T}, F={F}")
        raw = r.take(4 * T * F, f"utterance {i} features")
        feats = np.frombuffer(raw, dtype="<f4").reshape(T, F).astype(np.float64)
        utts.append(Utterance(feats, tokens, TAG_TO_LABEL[tag]))
    if r.pos != len(r.buf):
        raise FeatureFileError(f"trailing bytes after {count} utterances at byte offset {r.pos}")
    if utts and len({u.features.shape[1] for u in utts}) != 1:
        raise FeatureFileError("shape mismatch: utterances disagree on feature dimension")
    return utts


def ingest_features(path):
    with open(path, "rb") as fh:
        return decode_features(fh.read())


def corpus_paths(directory):
    return {split: os.path.join(directory, f"{split}.feat") for split in SPLITS}


def write_corpus(directory, corpus, overwrite=False):
    """Write ``train.feat``, ``dev.feat`` and ``test.feat`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    paths = corpus_paths(directory)
    if not overwrite:
        for p in paths.values():
            if os.path.exists(p):
                raise FileExistsError(f"{p} exists; pass overwrite to replace it")
    for split, p in paths.items():
        write_features(p, corpus.split(split), overwrite=True)
    return paths


def read_corpus(directory):
    return {split: ingest_features(p) for split, p in corpus_paths(directory).items()}
