import numpy as np
import pytest
from hypothesis import given, strategies as st

from slilasr import tensor as tn
from slilasr.gradcheck import numeric_grad, relative_error
from slilasr.tensor import Parameter, ShapeError, Tape, TapeError, Tensor, backward


def grads_of(fn, *arrays):
    leaves = [Parameter(np.array(a, dtype=float)) for a in arrays]
    with Tape():
        out = fn(*leaves)
    backward(out)
    return [l.grad for l in leaves]


# ---- hand-derived oracles ------------------------------------------------

def test_docstring_example():
    w = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape():
        loss = tn.reduce("sum", tn.matmul(w, w))
    backward(loss)
    np.testing.assert_array_equal(w.grad, np.full((2, 2), 4.0))


def test_product_rule_and_reuse():
    # f = x*x + x  ->  f' = 2x + 1
    (g,) = grads_of(lambda x: tn.reduce("sum", x * x + x), [3.0, -1.0])
    np.testing.assert_array_equal(g, [7.0, -1.0])


def test_broadcast_add_sums_gradient():
    ga, gb = grads_of(lambda a, b: tn.reduce("sum", tn.add(a, b)), np.ones((3, 4)), np.ones(4))
    np.testing.assert_array_equal(ga, np.ones((3, 4)))
    np.testing.assert_array_equal(gb, np.full(4, 3.0))


def test_relu_derivative_at_zero_is_zero():
    (g,) = grads_of(lambda x: tn.reduce("sum", tn.relu(x)), [-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_max_routes_to_first_argmax():
    (g,) = grads_of(lambda x: tn.reduce("max", x), [1.0, 5.0, 5.0, 2.0])
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0, 0.0])


def test_sigmoid_is_stable_for_large_inputs():
    out = tn.sigmoid(Tensor([-800.0, 0.0, 800.0])).data
    np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


def test_log_softmax_rows_normalise():
    y = tn.log_softmax(Tensor(np.array([[1000.0, 0.0], [1.0, 1.0]]))).data
    np.testing.assert_allclose(np.exp(y).sum(axis=1), 1.0)
    np.testing.assert_allclose(y[1], np.log(0.5))


def test_gradient_accumulates_across_backward_passes():
    p = Parameter(np.array([2.0]))
    for _ in range(2):
        with Tape():
            loss = tn.reduce("sum", p * p)
        backward(loss)
    np.testing.assert_array_equal(p.grad, [8.0])


def test_concat_slice_reshape_transpose_shapes():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor(np.zeros((2, 1)))
    assert tn.concat([a, b], axis=1).shape == (2, 4)
    assert tn.slice_axis(a, 1, 1, 3).shape == (2, 2)
    assert tn.transpose(tn.reshape(a, (3, 2))).shape == (2, 3)


# ---- error contracts -----------------------------------------------------

def test_shape_errors():
    with pytest.raises(ShapeError):
        tn.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ShapeError):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        tn.reshape(Tensor(np.ones(6)), (4, 2))


def test_log_of_nonpositive_raises():
    with pytest.raises(ValueError):
        tn.log(Tensor([1.0, 0.0]))


def test_non_finite_tensor_rejected():
    with pytest.raises(ValueError):
        Tensor([1.0, np.nan])


def test_backward_twice_raises():
    p = Parameter(np.ones(2))
    with Tape():
        loss = tn.reduce("sum", p * p)
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_backward_needs_scalar_and_tape():
    p = Parameter(np.ones(2))
    with Tape():
        out = p * p
    with pytest.raises(ValueError):
        backward(out)
    with pytest.raises(TapeError):
        backward(tn.reduce("sum", p))  # computed outside the tape


def test_no_recording_outside_tape_or_without_grad():
    p = Parameter(np.ones(2))
    assert not tn.mul(p, p).requires_grad
    with Tape() as tape:
        tn.mul(Tensor(np.ones(2)), Tensor(np.ones(2)))
    assert len(tape) == 0


def test_tensors_are_read_only():
    t = Tensor(np.ones(3))
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_unknown_op_kind():
    with pytest.raises(ValueError):
        tn.elementwise("cube", Tensor([1.0]))
    with pytest.raises(ValueError):
        tn.reduce("median", Tensor([1.0]))


# ---- property: every elementwise op against finite differences ----------

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


@given(kind=st.sampled_from(tn.ELEMENTWISE_KINDS),
       xs=st.lists(finite, min_size=1, max_size=6),
       ys=st.lists(finite, min_size=1, max_size=6))
def test_elementwise_matches_finite_differences(kind, xs, ys):
    n = min(len(xs), len(ys))
    x = np.array(xs[:n])
    if kind == "log":
        x = np.abs(x) + 0.1
    if kind == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
    leaves = [Parameter(x)]
    if kind in ("add", "sub", "mul"):
        leaves.append(Parameter(np.array(ys[:n])))
    w = Tensor(np.linspace(-1.0, 1.5, n))

    def loss():
        return tn.reduce("sum", tn.mul(tn.elementwise(kind, *leaves), w))

    with Tape():
        out = loss()
    backward(out)
    for leaf in leaves:
        num = numeric_grad(loss, leaf, np.arange(n))
        assert relative_error(leaf.grad, num) <= 1e-4


@given(st.lists(finite, min_size=2, max_size=8))
def test_sum_mean_gradients_are_uniform(xs):
    x = np.array(xs)
    (gs,) = grads_of(lambda a: tn.reduce("sum", a), x)
    (gm,) = grads_of(lambda a: tn.reduce("mean", a), x)
    np.testing.assert_array_equal(gs, np.ones(len(x)))
    np.testing.assert_allclose(gm, np.full(len(x), 1.0 / len(x)))
