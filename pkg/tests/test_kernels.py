"""The numba kernels and their pure-numpy fallbacks must agree."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from slilasr import _accel, kernels

needs_numba = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba backend disabled")


def _gru_inputs(rng, B=3, T=5, H=4):
    xp = rng.normal(size=(B, T, 3 * H))
    w_hh = rng.normal(size=(H, 3 * H)) * 0.5
    b_hh = rng.normal(size=3 * H) * 0.1
    lengths = np.array([T, T - 2, 1], dtype=np.int64)
    return xp, w_hh, b_hh, lengths


def test_backend_name_reports_selection():
    assert kernels.__name__ and _accel.backend_name() in ("numba", "numpy")


@needs_numba
@pytest.mark.parametrize("reverse", [False, True])
def test_gru_backends_agree(rng, reverse):
    xp, w_hh, b_hh, lengths = _gru_inputs(rng)
    out_a, cache_a = kernels._gru_forward_numpy(xp, w_hh, b_hh, lengths, reverse)
    out_b, cache_b = kernels._gru_forward_numba(xp, w_hh, b_hh, lengths, reverse)
    np.testing.assert_allclose(out_a, out_b, rtol=0, atol=1e-12)
    dout = rng.normal(size=out_a.shape)
    ga = kernels._gru_backward_numpy(dout, w_hh, lengths, reverse, cache_a)
    gb = kernels._gru_backward_numba(dout, w_hh, lengths, reverse, cache_b)
    for a, b in zip(ga, gb):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-11)


def test_gru_padding_frames_are_zero(rng):
    xp, w_hh, b_hh, lengths = _gru_inputs(rng)
    for reverse in (False, True):
        out, _ = kernels.gru_forward(xp, w_hh, b_hh, lengths, reverse)
        assert np.all(out[1, lengths[1]:] == 0.0)
        assert np.all(out[2, 1:] == 0.0)


@needs_numba
@given(T=st.integers(1, 8), V=st.integers(2, 5), m=st.integers(0, 3), seed=st.integers(0, 10**6))
def test_ctc_backends_agree(T, V, m, seed):
    r = np.random.default_rng(seed)
    logits = r.normal(size=(T, V))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    target = r.integers(1, V, size=m).astype(np.int64)
    need = len(target) + int(np.sum(target[1:] == target[:-1]))
    if need > T:
        return
    la, ga = kernels._ctc_numpy(lp, target)
    lb, gb = kernels._ctc_numba(lp, target)
    assert abs(la - lb) <= 1e-12 * max(1.0, abs(la))
    np.testing.assert_allclose(ga, gb, rtol=0, atol=1e-12)


@needs_numba
@given(st.lists(st.integers(0, 4), max_size=12), st.lists(st.integers(0, 4), max_size=12))
def test_edit_distance_backends_agree(a, b):
    a, b = np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)
    assert kernels._edit_distance_numpy(a, b) == kernels._edit_distance_numba(a, b)
