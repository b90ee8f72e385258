"""Stage-one and stage-two models: shapes, parameter counts, error contracts, training."""
import numpy as np
import pytest

from slilasr.asr import (
    VARIANTS,
    AsrConfig,
    AsrModel,
    CerReport,
    MissingCodeError,
    asr_forward,
    asr_train,
    evaluate_asr,
    expected_param_count,
    transcribe,
)
from slilasr.conditioning import LanguageCode
from slilasr.corpus import CorpusConfig, generate_corpus
from slilasr.lid import LidConfig, LidModel, codes_from_log_probs, lid_forward, lid_predict
from slilasr.losses import ctc_loss_batch
from slilasr.tensor import ShapeError, Tape, backward

TINY = {"train": {"A": 3, "B": 1, "MIXED": 1}, "dev": {"A": 1, "B": 1, "MIXED": 1},
        "test": {"A": 1, "B": 1, "MIXED": 1}}
SMALL_ASR = dict(hidden=8, layers=2, dropout=0.0, se_reduction=2, film_hidden=8)


@pytest.fixture(scope="module")
def five():
    return generate_corpus(CorpusConfig(counts=TINY))


# ---- LID -----------------------------------------------------------------

def test_lid_shapes_and_normalisation(rng):
    model = LidModel(LidConfig(conv_channels=8, hidden=8))
    assert len(model.convs) == 3 and len(model.rnns) == 5
    lp = lid_forward(model, rng.normal(size=(4, 20, 16)), [20, 18, 10, 7])
    assert lp.shape == (4, 3)
    np.testing.assert_allclose(np.exp(lp.data).sum(axis=1), 1.0)


def test_lid_too_short_input():
    model = LidModel(LidConfig(conv_channels=8, hidden=8))
    assert model.min_frames() == 7
    with pytest.raises(ShapeError):
        lid_forward(model, np.zeros((1, 6, 16)))


def test_lid_predict_single_and_batch(rng):
    model = LidModel(LidConfig(conv_channels=8, hidden=8))
    x = rng.normal(size=(12, 16))
    code = lid_predict(model, x)
    assert isinstance(code, LanguageCode)
    assert lid_predict(model, x[None])[0] == code
    assert model.training  # prediction restores the previous mode


def test_codes_ties_go_to_lowest_index():
    codes = codes_from_log_probs(np.log(np.array([[0.4, 0.4, 0.2], [0.2, 0.3, 0.5]])))
    assert [c.index for c in codes] == [0, 2]


# ---- ASR -----------------------------------------------------------------

@pytest.mark.parametrize("mode,position", [("none", "before"), ("append", "before")]
                         + list(VARIANTS.values()))
def test_param_count_closed_form(mode, position):
    cfg = AsrConfig(mode=mode, position=position)
    assert AsrModel(cfg).num_parameters() == expected_param_count(cfg)


def test_conditioning_adds_parameters():
    base = expected_param_count(AsrConfig(mode="none"))
    assert expected_param_count(AsrConfig(mode="append")) > base
    assert expected_param_count(AsrConfig(mode="slil")) > expected_param_count(AsrConfig(mode="film")) > base


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_every_variant_runs_and_backpropagates(name, rng):
    mode, position = VARIANTS[name]
    model = AsrModel(AsrConfig(mode=mode, position=position, **SMALL_ASR))
    x = rng.normal(size=(2, 12, 16))
    codes = [LanguageCode.from_index(0), LanguageCode.from_index(2)]
    with Tape():
        lp = asr_forward(model, x, codes, [12, 9])
        loss = ctc_loss_batch(lp, model.out_lengths([12, 9]), [[2, 3], [4]])
    backward(loss)
    assert lp.shape == (2, 8, 14)
    assert all(p.grad is not None for p in model.film.parameters())


def test_missing_code_is_an_error(rng):
    model = AsrModel(AsrConfig(mode="slil", **SMALL_ASR))
    with pytest.raises(MissingCodeError):
        asr_forward(model, rng.normal(size=(1, 10, 16)))
    with pytest.raises(MissingCodeError):
        transcribe(model, rng.normal(size=(10, 16)))


def test_none_mode_ignores_codes(rng):
    model = AsrModel(AsrConfig(mode="none", **SMALL_ASR)).eval()
    x = rng.normal(size=(1, 10, 16))
    a = asr_forward(model, x).data
    b = asr_forward(model, x, [LanguageCode.from_index(1)]).data
    assert np.array_equal(a, b)


def test_memorise_five_utterances(five):
    cfg = AsrConfig(hidden=16, layers=2, dropout=0.0, lr=1e-2, batch_size=5, epochs=150,
                    patience=150)
    model = AsrModel(cfg)
    asr_train(model, five.train, five.train, None, cfg)
    report = evaluate_asr(model, five.train)
    assert report.cer == 0.0
    assert transcribe(model, five.train[0].features) == list(five.train[0].tokens)


def test_oracle_codes_need_no_lid(five):
    cfg = AsrConfig(mode="slil", epochs=1, **SMALL_ASR)
    history = asr_train(AsrModel(cfg), five.train, five.dev, None, cfg, oracle_codes=True)
    assert [r["epoch"] for r in history] == [0, 1]
    with pytest.raises(MissingCodeError):
        asr_train(AsrModel(cfg), five.train, five.dev, None, cfg)


def test_cer_report_recombines():
    rep = CerReport()
    rep.add("A", [2, 3], [2, 3, 4])
    rep.add("B", [9], [5, 6])
    rep.add("MIXED", [2], [2])
    d = rep.to_dict()
    weighted = sum(d["per_language"][k] * d["tokens"][k] for k in d["tokens"]) / sum(d["tokens"].values())
    assert abs(weighted - d["cer"]) <= 1e-12
    assert d["cer"] == pytest.approx(3 / 6)
