import numpy as np
import pytest
from hypothesis import given, strategies as st

from slilasr.asr import AsrConfig, AsrModel, asr_forward
from slilasr.conditioning import (
    ConditioningConfig,
    FilmGenerator,
    FilmParams,
    LanguageCode,
    SeBlock,
    append_onehot,
    film_apply,
    generate_film_params,
    se_apply,
    se_film_apply,
    se_gate,
    slil_apply,
)
from slilasr.tensor import ShapeError, Tensor

SMALL = dict(n_features=5, vocab_size=6, hidden=4, layers=2, dropout=0.0, se_reduction=2,
             film_hidden=6)


def film_identity_pair(position, seed):
    plain = AsrModel(AsrConfig(mode="none", seed=seed, **SMALL))
    film = AsrModel(AsrConfig(mode="film", position=position, seed=seed + 100, **SMALL))
    shared = {k: v for k, v in plain.state_dict().items()}
    state = film.state_dict()
    state.update(shared)
    film.load_state_dict(state)
    return plain.eval(), film.eval()


@pytest.mark.parametrize("position", ["before", "after"])
def test_film_identity_is_bit_exact(position):
    for probe in range(10):
        plain, film = film_identity_pair(position, probe)
        rng = np.random.default_rng(probe)
        x = rng.uniform(-2, 2, size=(3, 9, 5))
        lengths = np.array([9, 7, 5])
        ident = FilmParams.constant(3, 2, 8)
        codes = [LanguageCode.from_index(i) for i in (0, 1, 2)]
        a = asr_forward(plain, x, None, lengths).data
        b = asr_forward(film, x, codes, lengths, film_override=ident).data
        assert np.array_equal(a, b)


def test_film_apply_formula(rng):
    x = rng.normal(size=(2, 3, 4))
    g, b = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    out = film_apply(Tensor(x), Tensor(g), Tensor(b)).data
    np.testing.assert_array_equal(out, g[:, None, :] * x + b[:, None, :])
    with pytest.raises(ShapeError):
        film_apply(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_generator_bounds_and_layer_slices(rng):
    gen = FilmGenerator(3, 4, 5, rng)
    p = generate_film_params(gen, [LanguageCode.from_index(i) for i in range(3)])
    assert p.gamma.shape == (3, 20)
    assert np.all(np.abs(p.gamma.data) < 1) and np.all(np.abs(p.beta.data) < 1)
    g2, _ = p.layer(2)
    np.testing.assert_array_equal(g2.data, p.gamma.data[:, 10:15])
    with pytest.raises(IndexError):
        p.layer(4)
    with pytest.raises(ShapeError):
        generate_film_params(gen, np.ones((1, 4)))


def test_generator_distinguishes_languages(rng):
    gen = FilmGenerator(3, 2, 4, rng)
    p = generate_film_params(gen, np.eye(3))
    assert not np.allclose(p.gamma.data[0], p.gamma.data[1])


finite = st.floats(-2.0, 2.0, allow_nan=False)


@given(st.lists(finite, min_size=24, max_size=24), st.integers(0, 1000))
def test_se_contracts_and_gates_in_unit_interval(values, seed):
    block = SeBlock(4, np.random.default_rng(seed), reduction=2)
    x = Tensor(np.array(values).reshape(2, 3, 4))
    theta = se_gate(block, x, [3, 2]).data
    assert np.all((theta > 0) & (theta < 1))
    y = se_apply(block, x, [3, 2]).data
    assert np.all(np.abs(y) <= np.abs(x.data))


def test_zero_weight_se_halves_exactly(rng):
    block = SeBlock(8, rng)
    for p in block.parameters():
        p.assign(np.zeros(p.shape))
    x = rng.normal(size=(2, 5, 8))
    np.testing.assert_array_equal(se_apply(block, Tensor(x)).data, x * 0.5)


def test_slil_and_se_film_orders(rng):
    block = SeBlock(4, rng, reduction=2)
    x = Tensor(rng.normal(size=(2, 3, 4)))
    g, b = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    slil = slil_apply(g, b, block, x).data
    sefilm = se_film_apply(g, b, block, x).data
    np.testing.assert_array_equal(slil, se_apply(block, film_apply(x, g, b)).data)
    np.testing.assert_array_equal(sefilm, film_apply(se_apply(block, x), g, b).data)
    assert not np.allclose(slil, sefilm)


def test_se_masked_mean_ignores_padding(rng):
    block = SeBlock(4, rng, reduction=2)
    x = rng.normal(size=(1, 5, 4))
    padded = x.copy()
    padded[0, 3:] = 1e3
    a = se_gate(block, Tensor(x[:, :3])).data
    b = se_gate(block, Tensor(padded), [3]).data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_language_code_validation():
    assert LanguageCode.from_label("B").index == 1
    assert LanguageCode.from_index(2).vector == (0.0, 0.0, 1.0)
    for bad in [(0.5, 0.5, 0.0), (1.0, 1.0, 0.0), (0.0, 0.0, 0.0), ()]:
        with pytest.raises(ValueError):
            LanguageCode(bad)
    with pytest.raises(ValueError):
        LanguageCode.from_index(3)


def test_append_onehot(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))
    out = append_onehot(x, [LanguageCode.from_index(0), LanguageCode.from_index(2)]).data
    assert out.shape == (2, 3, 7)
    np.testing.assert_array_equal(out[1, :, 4:], np.tile([0.0, 0.0, 1.0], (3, 1)))
    with pytest.raises(ValueError):
        append_onehot(x, np.array([[0.5, 0.5, 0.0], [1.0, 0.0, 0.0]]))


def test_conditioning_config_validation():
    assert ConditioningConfig("slil").uses_se and ConditioningConfig("slil").uses_film
    assert not ConditioningConfig("append").uses_film
    with pytest.raises(ValueError):
        ConditioningConfig("film", "middle")
    with pytest.raises(ValueError):
        ConditioningConfig("gate")


def test_se_reduction_must_divide(rng):
    with pytest.raises(ValueError):
        SeBlock(6, rng, reduction=4)
