"""Run configuration: a TOML document with a global seed and five sections.

Every key is optional and falls back to the defaults below; any key that is
not listed here is rejected before work starts.

::

    seed = 0                      # global seed: corpus, both models, batching

    [corpus]
    path = ""                     # directory with train/dev/test.feat; "" = generate in memory
    n_features = 16
    frames_per_token = 4
    noise = 0.3
    min_tokens = 3
    max_tokens = 12
    n_exclusive = 4               # exclusive tokens per language
    n_shared = 4                  # tokens shared by both languages
    template_scale = 1.0
    shared_radius = 3.0
    train = {A = 282, B = 156, MIXED = 162}
    dev = {A = 56, B = 31, MIXED = 33}
    test = {A = 56, B = 31, MIXED = 33}

    [lid]
    conv_channels = 32
    kernel_width = 3
    conv_stride = 1
    hidden = 64
    dropout = 0.1
    epochs = 20
    lr = 1e-3
    checkpoint = "lid.ckpt"

    [asr]
    mode = "slil"                 # none | append | film | slil | se_film
    position = "before"           # before | after
    conv_layers = 2
    conv_channels = 0             # 0 = 2 * hidden
    kernel_width = 3
    conv_stride = 1
    hidden = 48
    layers = 3
    dropout = 0.1
    se_reduction = 8
    film_hidden = 32
    epochs = 20
    patience = 5
    lr = 1e-3
    checkpoint = "asr.ckpt"

    [train]
    batch_size = 32
    clip_norm = 5.0

    [eval]
    split = "test"                # dev | test
    seeds = [0, 1, 2]             # ablation seeds
    configs = ["none", "append", "M1", "M2", "M3", "M4", "M5", "M6"]
    report = "ablation"           # ablation report path prefix
"""
import copy
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .asr import VARIANTS, AsrConfig
from .conditioning import LANGUAGES
from .corpus import SPLITS, CorpusConfig
from .lid import LidConfig

ABLATION_CONFIGS = ("none", "append", "M1", "M2", "M3", "M4", "M5", "M6")

DEFAULTS = {
    "seed": 0,
    "corpus": {
        "path": "", "n_features": 16, "frames_per_token": 4, "noise": 0.3,
        "min_tokens": 3, "max_tokens": 12, "n_exclusive": 4, "n_shared": 4,
        "template_scale": 1.0, "shared_radius": 3.0,
        "train": {"A": 282, "B": 156, "MIXED": 162},
        "dev": {"A": 56, "B": 31, "MIXED": 33},
        "test": {"A": 56, "B": 31, "MIXED": 33},
    },
    "lid": {
        "conv_channels": 32, "kernel_width": 3, "conv_stride": 1, "hidden": 64,
        "dropout": 0.1, "epochs": 20, "lr": 1e-3, "checkpoint": "lid.ckpt",
    },
    "asr": {
        "mode": "slil", "position": "before", "conv_layers": 2, "conv_channels": 0,
        "kernel_width": 3, "conv_stride": 1, "hidden": 48, "layers": 3, "dropout": 0.1,
        "se_reduction": 8, "film_hidden": 32, "epochs": 20, "patience": 5, "lr": 1e-3,
        "checkpoint": "asr.ckpt",
    },
    "train": {"batch_size": 32, "clip_norm": 5.0},
    "eval": {
        "split": "test", "seeds": [0, 1, 2], "configs": list(ABLATION_CONFIGS),
        "report": "ablation",
    },
}
SECTIONS = ("corpus", "lid", "asr", "train", "eval")


class ConfigError(ValueError):
    pass


def _check_type(where, value, default):
    if isinstance(default, bool) or isinstance(value, bool):
        ok = type(value) is type(default)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
    elif isinstance(default, int):
        ok = isinstance(value, int)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")


def _merge(where, defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        path = f"{where}.{key}" if where else key
        if key not in defaults:
            raise ConfigError(f"unknown key {path!r}")
        default = defaults[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected a table")
            out[key] = _merge(path, default, value)
        else:
            _check_type(path, value, default)
            out[key] = float(value) if isinstance(default, float) else value
    return out


@dataclass
class RunConfig:
    values: dict
    present: frozenset = field(default_factory=lambda: frozenset(SECTIONS))

    @classmethod
    def from_dict(cls, raw, require_all=False):
        merged = _merge("", DEFAULTS, raw)
        present = frozenset(s for s in SECTIONS if s in raw)
        cfg = cls(merged, frozenset(SECTIONS) if require_all else present)
        cfg.validate()
        return cfg

    @classmethod
    def default(cls):
        return cls.from_dict({}, require_all=True)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls.from_dict(raw)

    def require(self, *sections):
        for s in sections:
            if s not in self.present:
                raise ConfigError(f"config is missing the [{s}] section")

    def with_seed(self, seed):
        values = copy.deepcopy(self.values)
        values["seed"] = int(seed)
        return RunConfig(values, self.present)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self):
        return self.values["seed"]

    def validate(self):
        v = self.values
        for split in SPLITS:
            if set(v["corpus"][split]) != set(LANGUAGES):
                raise ConfigError(f"corpus.{split} must give counts for {', '.join(LANGUAGES)}")
        try:
            self.corpus_config().validate()
            self.lid_config()
            self.asr_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if v["eval"]["split"] not in ("dev", "test"):
            raise ConfigError("eval.split must be 'dev' or 'test'")
        unknown = [c for c in v["eval"]["configs"] if c not in ABLATION_CONFIGS]
        if unknown:
            raise ConfigError(f"eval.configs: unknown configuration(s) {unknown}")
        if not v["eval"]["seeds"] or not all(isinstance(s, int) for s in v["eval"]["seeds"]):
            raise ConfigError("eval.seeds must be a non-empty list of integers")

    # -- typed views -------------------------------------------------------

    def corpus_config(self):
        c = self.values["corpus"]
        return CorpusConfig(
            seed=self.seed, n_features=c["n_features"], frames_per_token=c["frames_per_token"],
            noise=c["noise"], min_tokens=c["min_tokens"], max_tokens=c["max_tokens"],
            n_exclusive=c["n_exclusive"], n_shared=c["n_shared"],
            template_scale=c["template_scale"], shared_radius=c["shared_radius"],
            counts={s: dict(c[s]) for s in SPLITS})

    def lid_config(self, seed=None):
        c, t = self.values["lid"], self.values["train"]
        return LidConfig(
            n_features=self.values["corpus"]["n_features"], conv_channels=c["conv_channels"],
            kernel_width=c["kernel_width"], conv_stride=c["conv_stride"], hidden=c["hidden"],
            dropout=c["dropout"], lr=c["lr"], batch_size=t["batch_size"], epochs=c["epochs"],
            seed=self.seed if seed is None else seed, clip_norm=t["clip_norm"])

    def asr_config(self, mode=None, position=None, seed=None):
        c, t, k = self.values["asr"], self.values["train"], self.values["corpus"]
        return AsrConfig(
            n_features=k["n_features"], vocab_size=2 + 2 * k["n_exclusive"] + k["n_shared"],
            conv_layers=c["conv_layers"], conv_channels=c["conv_channels"],
            kernel_width=c["kernel_width"], conv_stride=c["conv_stride"], hidden=c["hidden"],
            layers=c["layers"], dropout=c["dropout"], mode=mode or c["mode"],
            position=position or c["position"], se_reduction=c["se_reduction"],
            film_hidden=c["film_hidden"], lr=c["lr"], batch_size=t["batch_size"],
            epochs=c["epochs"], patience=c["patience"],
            seed=self.seed if seed is None else seed, clip_norm=t["clip_norm"])

    def ablation_asr_config(self, name, seed):
        if name in ("none", "append"):
            return self.asr_config(mode=name, position="before", seed=seed)
        mode, position = VARIANTS[name]
        return self.asr_config(mode=mode, position=position, seed=seed)
