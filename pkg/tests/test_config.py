from pathlib import Path

import pytest

from slilasr.config import ABLATION_CONFIGS, ConfigError, RunConfig

ROOT = Path(__file__).resolve().parents[1]


def load_text(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return RunConfig.load(p)


def test_shipped_default_matches_builtin():
    assert RunConfig.load(ROOT / "configs" / "default.toml").values == RunConfig.default().values


def test_unknown_keys_rejected_everywhere(tmp_path):
    for text in ("sed = 1\n", "[corpus]\nnoize = 0.1\n", "[corpus.train]\nC = 3\n",
                 "[lid]\nlayers = 9\n", "[gpu]\nx = 1\n"):
        with pytest.raises(ConfigError, match="unknown key"):
            load_text(tmp_path, text)


def test_type_and_value_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_text(tmp_path, '[asr]\nhidden = "wide"\n')
    with pytest.raises(ConfigError):
        load_text(tmp_path, '[asr]\nmode = "gate"\n')
    with pytest.raises(ConfigError):
        load_text(tmp_path, '[eval]\nconfigs = ["M7"]\n')
    with pytest.raises(ConfigError):
        load_text(tmp_path, '[eval]\nsplit = "train"\n')
    with pytest.raises(ConfigError, match="parse"):
        load_text(tmp_path, "[corpus\n")


def test_missing_section_is_named(tmp_path):
    cfg = load_text(tmp_path, "seed = 3\n[lid]\nepochs = 2\n")
    cfg.require("lid")
    with pytest.raises(ConfigError, match=r"\[corpus\]"):
        cfg.require("corpus")


def test_typed_views(tmp_path):
    cfg = load_text(tmp_path, "seed = 5\n[corpus]\nn_shared = 3\n[train]\nbatch_size = 16\n"
                              "[asr]\nhidden = 10\n")
    assert cfg.corpus_config().seed == 5
    assert cfg.asr_config().vocab_size == 2 + 8 + 3
    assert cfg.asr_config().conv_channels == 20
    assert cfg.lid_config().batch_size == 16
    m3 = cfg.ablation_asr_config("M3", seed=2)
    assert (m3.mode, m3.position, m3.seed) == ("slil", "before", 2)
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 5


def test_default_ablation_set():
    assert RunConfig.default()["eval"]["configs"] == list(ABLATION_CONFIGS)
    assert len(ABLATION_CONFIGS) == 8
    assert RunConfig.default()["eval"]["seeds"] == [0, 1, 2]
