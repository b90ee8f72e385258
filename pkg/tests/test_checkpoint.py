import numpy as np
import pytest

from slilasr.asr import AsrConfig, AsrModel, asr_forward
from slilasr.checkpoint import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_asr,
    load_lid,
    model_hash,
    save_asr,
    save_lid,
)
from slilasr.conditioning import LanguageCode
from slilasr.lid import LidConfig, LidModel, lid_forward

VOCAB = ["<blank>", "<unk>"] + [f"T{i}" for i in range(12)]


def test_asr_round_trip_is_bit_exact(tmp_path, rng):
    model = AsrModel(AsrConfig(mode="slil", hidden=8, se_reduction=2)).eval()
    path = tmp_path / "asr.ckpt"
    save_asr(path, model, VOCAB, lid_hash="abc")
    back, vocab, extra = load_asr(path)
    x = rng.normal(size=(2, 11, 16))
    codes = [LanguageCode.from_index(0), LanguageCode.from_index(1)]
    assert np.array_equal(asr_forward(model, x, codes, [11, 8]).data,
                          asr_forward(back, x, codes, [11, 8]).data)
    assert vocab == VOCAB and extra == {"lid_hash": "abc"}
    assert model_hash(back) == model_hash(model)


def test_lid_round_trip_and_determinism(tmp_path, rng):
    model = LidModel(LidConfig(conv_channels=8, hidden=8)).eval()
    save_lid(tmp_path / "a", model)
    save_lid(tmp_path / "b", model)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    back = load_lid(tmp_path / "a")
    x = rng.normal(size=(1, 15, 16))
    assert np.array_equal(lid_forward(model, x).data, lid_forward(back, x).data)


def test_checksum_and_stage_are_verified(tmp_path):
    state = {"w": np.arange(4.0)}
    buf = bytearray(encode_checkpoint("lid", {"a": 1}, state))
    buf[-40] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(buf))
    with pytest.raises(CheckpointError, match="stage"):
        decode_checkpoint(encode_checkpoint("lid", {}, state), stage="asr")
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"garbage")
    with pytest.raises(CheckpointError):
        encode_checkpoint("decoder", {}, state)


def test_refuses_to_overwrite(tmp_path):
    model = LidModel(LidConfig(conv_channels=8, hidden=8))
    save_lid(tmp_path / "x", model)
    with pytest.raises(FileExistsError):
        save_lid(tmp_path / "x", model)
    save_lid(tmp_path / "x", model, overwrite=True)


def test_hash_changes_with_any_parameter():
    model = LidModel(LidConfig(conv_channels=8, hidden=8))
    h = model_hash(model)
    p = model.classifier.bias
    p.assign(p.data + np.array([0.0, 0.0, 1e-12]))
    assert model_hash(model) != h
