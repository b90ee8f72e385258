import struct

import numpy as np
import pytest

from slilasr.corpus import (
    DEFAULT_COUNTS,
    MAGIC,
    CorpusConfig,
    FeatureFileError,
    Utterance,
    build_design,
    decode_features,
    encode_features,
    generate_corpus,
    ingest_features,
    read_corpus,
    render_utterance,
    write_corpus,
    write_features,
)

TINY = {"train": {"A": 10, "B": 6, "MIXED": 6}, "dev": {"A": 4, "B": 3, "MIXED": 3},
        "test": {"A": 4, "B": 3, "MIXED": 3}}


@pytest.fixture(scope="module")
def tiny():
    return generate_corpus(CorpusConfig(counts=TINY))


def chunks(u, fpt=4):
    return [u.features[i:i + fpt].mean(axis=0) for i in range(0, u.duration, fpt)]


def nearest(design, frame, candidates):
    return min(candidates, key=lambda tl: np.linalg.norm(design.render(*tl) - frame))[0]


def test_same_seed_bit_identical(tiny):
    again = generate_corpus(CorpusConfig(counts=TINY))
    for split in ("train", "dev", "test"):
        assert tiny.split(split) == again.split(split)
    assert encode_features(tiny.train) == encode_features(again.train)


def test_different_seed_differs(tiny):
    other = generate_corpus(CorpusConfig(seed=1, counts=TINY))
    assert other.train != tiny.train


def test_requested_counts_exact():
    counts = {"train": {"A": 100, "B": 60, "MIXED": 60}, "dev": {"A": 2, "B": 2, "MIXED": 2},
              "test": {"A": 2, "B": 2, "MIXED": 2}}
    c = generate_corpus(CorpusConfig(counts=counts))
    assert c.counts() == counts


def test_default_counts_and_ratio():
    assert sum(DEFAULT_COUNTS["train"].values()) == 600
    assert sum(DEFAULT_COUNTS["dev"].values()) == sum(DEFAULT_COUNTS["test"].values()) == 120


def test_utterance_invariants(tiny):
    design = tiny.design
    for split in ("train", "dev", "test"):
        for u in tiny.split(split):
            assert u.duration == 4 * len(u.tokens)
            assert 3 <= len(u.tokens) <= 12
            has_a = any(t in design.exclusive["A"] for t in u.tokens)
            has_b = any(t in design.exclusive["B"] for t in u.tokens)
            assert (u.label == "MIXED") == (has_a and has_b)
            if u.label == "A":
                assert has_a and not has_b
            if u.label == "B":
                assert has_b and not has_a


def test_no_duplicates_across_splits(tiny):
    train = {(u.tokens, u.label) for u in tiny.train}
    dev = {(u.tokens, u.label) for u in tiny.dev}
    test = {(u.tokens, u.label) for u in tiny.test}
    assert not (dev & train) and not (test & train) and not (test & dev)


def test_template_separation_and_shared_tokens():
    cfg = CorpusConfig()
    design = build_design(cfg)
    assert design.min_separation() >= 4 * cfg.noise
    assert len(design.shared) >= 2
    for s in design.shared:
        assert not np.allclose(design.render(s, "A"), design.render(s, "B"))


def test_noiseless_language_aware_oracle_is_perfect():
    c = generate_corpus(CorpusConfig(counts=TINY), noise=0.0)
    d = c.design
    for u in c.train + c.test:
        if u.label == "MIXED":
            continue
        cands = [(t, u.label) for t in d.languages[u.label].tokens]
        assert [nearest(d, f, cands) for f in chunks(u)] == list(u.tokens)


def test_language_blind_decoder_errs_on_shared_probe():
    # S_i spoken in B renders exactly as another shared token spoken in A, so a
    # decoder that only sees the frame must answer both probes the same way.
    d = build_design(CorpusConfig())
    probes = []
    for s in d.shared:
        frame = d.render(s, "B")
        twin = [t for t in d.shared if t != s and np.allclose(d.render(t, "A"), frame, atol=1e-12)]
        assert len(twin) == 1
        probes.append((frame, s, "B"))
        probes.append((d.render(twin[0], "A"), twin[0], "A"))

    def blind(frame):
        cands = [(t, lang) for lang in ("A", "B") for t in d.languages[lang].tokens]
        dist = [np.round(np.linalg.norm(d.render(*c) - frame), 9) for c in cands]
        return cands[int(np.argmin(dist))][0]

    def aware(frame, lang):
        return nearest(d, frame, [(t, lang) for t in d.languages[lang].tokens])

    blind_errors = sum(blind(f) != truth for f, truth, _ in probes)
    aware_errors = sum(aware(f, lang) != truth for f, truth, lang in probes)
    assert aware_errors == 0
    assert blind_errors >= len(d.shared)


def test_round_trip_through_file(tmp_path, tiny):
    path = tmp_path / "train.feat"
    write_features(path, tiny.train)
    assert ingest_features(path) == tiny.train
    with pytest.raises(FileExistsError):
        write_features(path, tiny.train)
    write_features(path, tiny.dev, overwrite=True)
    assert ingest_features(path) == tiny.dev


def test_corpus_directory_round_trip(tmp_path, tiny):
    write_corpus(tmp_path / "c", tiny)
    back = read_corpus(tmp_path / "c")
    assert back["test"] == tiny.test
    with pytest.raises(FileExistsError):
        write_corpus(tmp_path / "c", tiny)


def test_truncated_file_names_offset(tiny):
    buf = encode_features(tiny.dev)
    with pytest.raises(FeatureFileError, match="byte offset"):
        decode_features(buf[:-7])
    with pytest.raises(FeatureFileError, match="byte offset"):
        decode_features(buf[:len(MAGIC) + 3])


def test_bad_magic_and_unknown_tag(tiny):
    buf = bytearray(encode_features(tiny.dev[:1]))
    with pytest.raises(FeatureFileError, match="magic"):
        decode_features(b"NOTAFILE" + bytes(buf[8:]))
    buf[len(MAGIC) + 6] = ord("C")
    with pytest.raises(FeatureFileError, match="unknown language tag"):
        decode_features(bytes(buf))


def test_layout_matches_documentation():
    u = Utterance(np.arange(6, dtype=np.float64).reshape(3, 2), (2, 5), "B")
    buf = encode_features([u])
    expected = (MAGIC + struct.pack("<HI", 1, 1) + b"B" + struct.pack("<HHH", 2, 2, 5)
                + struct.pack("<II", 3, 2) + np.arange(6, dtype="<f4").tobytes())
    assert buf == expected


def test_invalid_config():
    with pytest.raises(ValueError):
        generate_corpus(CorpusConfig(min_tokens=1))
    bad = {k: dict(v) for k, v in TINY.items()}
    bad["dev"]["A"] = 0
    with pytest.raises(ValueError):
        generate_corpus(CorpusConfig(counts=bad))


def test_render_is_float32_exact():
    d = build_design(CorpusConfig())
    feats = render_utterance(d, [2, 3], ["A", "A"], 4, 0.3, np.random.default_rng(0))
    assert np.array_equal(feats, feats.astype(np.float32).astype(np.float64))
