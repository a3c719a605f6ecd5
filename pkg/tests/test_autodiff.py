import math
import zlib

import numpy as np
import pytest

from featstack import autodiff as ad
from featstack.errors import InvalidInputError, ShapeError

from gradcheck import REL_TOL, away_from_zero, check_gradients, op_cases


# --- forward values -------------------------------------------------------

def test_elu_examples():
    out = ad.elu(ad.Tensor([[0.0, 2.5, -math.log(2.0)]])).value
    np.testing.assert_allclose(out, [[0.0, 2.5, -0.5]], atol=1e-15)


def test_elu_is_continuous_at_zero():
    out = ad.elu(ad.Tensor([[-1e-12, 1e-12]])).value
    np.testing.assert_allclose(out, [[-1e-12, 1e-12]], atol=1e-20)


def test_dropout_rate_zero_and_eval_are_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(ad.dropout(ad.Tensor(x), 0.0, True, rng).value, x)
    np.testing.assert_array_equal(ad.dropout(ad.Tensor(x), 0.5, False).value, x)


def test_dropout_is_unbiased():
    rng = np.random.default_rng(3)
    out = ad.dropout(ad.Tensor(np.ones((100_000, 1))), 0.5, True, rng).value
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}


@pytest.mark.parametrize("rate", [1.0, -0.1, 1.5])
def test_dropout_rejects_invalid_rate(rate):
    with pytest.raises(InvalidInputError):
        ad.dropout(ad.Tensor(np.ones((2, 2))), rate, True, np.random.default_rng(0))


def test_batch_norm_train_mode_standardizes_columns():
    rng = np.random.default_rng(1)
    # large spread so eps barely moves the variance
    x = rng.normal(3.0, 10.0, size=(64, 5))
    state = ad.BatchNormState(5)
    out = ad.batch_norm(ad.Tensor(x), state, training=True).value
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)


def test_batch_norm_constant_column_gives_shift():
    state = ad.BatchNormState(2)
    state.beta.value = np.array([[0.7, -1.5]])
    state.gamma.value = np.array([[3.0, 2.0]])
    x = np.tile([[4.0, -2.0]], (6, 1))
    out = ad.batch_norm(ad.Tensor(x), state, training=True).value
    np.testing.assert_allclose(out, np.tile([[0.7, -1.5]], (6, 1)), atol=1e-12)


def test_batch_norm_eval_with_unit_stats_is_identity():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 3))
    state = ad.BatchNormState(3, eps=0.0)
    np.testing.assert_allclose(ad.batch_norm(ad.Tensor(x), state, training=False).value, x,
                               atol=1e-15)


def test_batch_norm_running_statistics_update():
    x = np.array([[1.0], [3.0]])
    state = ad.BatchNormState(1, momentum=0.1)
    ad.batch_norm(ad.Tensor(x), state, training=True)
    # batch mean 2, unbiased variance 2
    np.testing.assert_allclose(state.running_mean, [0.9 * 0 + 0.1 * 2.0])
    np.testing.assert_allclose(state.running_var, [0.9 * 1 + 0.1 * 2.0])


def test_batch_norm_eval_leaves_state_untouched():
    state = ad.BatchNormState(2)
    ad.batch_norm(ad.Tensor(np.ones((3, 2))), state, training=False)
    np.testing.assert_array_equal(state.running_mean, [0.0, 0.0])
    np.testing.assert_array_equal(state.running_var, [1.0, 1.0])


def test_batch_norm_single_row_train_raises():
    with pytest.raises(InvalidInputError):
        ad.batch_norm(ad.Tensor(np.ones((1, 3))), ad.BatchNormState(3), training=True)


def test_eval_mode_is_rng_independent():
    x = np.random.default_rng(4).normal(size=(5, 2))
    state = ad.BatchNormState(2)
    a = ad.dropout(ad.batch_norm(ad.Tensor(x), state, False), 0.5, False,
                   np.random.default_rng(1)).value
    b = ad.dropout(ad.batch_norm(ad.Tensor(x), state, False), 0.5, False,
                   np.random.default_rng(99)).value
    np.testing.assert_array_equal(a, b)


def test_mse_loss_examples():
    assert ad.mse_loss(ad.Tensor([1.0, 3.0]), ad.Tensor([1.0, 3.0])).value[0, 0] == 0.0
    assert ad.mse_loss(ad.Tensor([1.0, 3.0]), ad.Tensor([0.0, 0.0])).value[0, 0] == 5.0
    assert ad.mse_loss(ad.Tensor([2.0]), ad.Tensor([5.0])).value[0, 0] == 9.0


def test_mse_loss_length_mismatch():
    with pytest.raises(ShapeError):
        ad.mse_loss(ad.Tensor([1.0, 2.0]), ad.Tensor([1.0, 2.0, 3.0]))


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(ad.Tensor(np.ones((2, 2))), ad.Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ad.matmul(ad.Tensor(np.ones((2, 2))), ad.Tensor(np.ones((3, 2))))


# --- backward ---------------------------------------------------------------

def test_backward_square_at_three():
    x = ad.parameter([[3.0]])
    ad.backward(ad.square(x))
    assert x.grad[0, 0] == 6.0


def test_backward_mse_gradient_example():
    pred = ad.parameter([1.0, 3.0])
    ad.backward(ad.mse_loss(pred, ad.Tensor([0.0, 0.0])))
    np.testing.assert_allclose(pred.grad.ravel(), [1.0, 3.0])


def test_backward_requires_scalar_root():
    with pytest.raises(ShapeError):
        ad.backward(ad.parameter(np.ones((2, 1))))


def test_backward_repeated_calls_are_identical():
    rng = np.random.default_rng(5)
    w = ad.parameter(rng.normal(size=(3, 2)))
    x = ad.Tensor(rng.normal(size=(4, 3)))
    loss = ad.mean(ad.square(ad.elu(ad.matmul(x, w))))
    ad.backward(loss)
    first = w.grad.copy()
    ad.backward(loss)
    np.testing.assert_array_equal(w.grad, first)


def test_backward_accumulates_over_shared_nodes():
    x = ad.parameter([[2.0]])
    # x * x + x -> 2x + 1
    ad.backward(ad.add(ad.mul(x, x), x))
    assert x.grad[0, 0] == 5.0


def test_constants_receive_no_gradient():
    c = ad.Tensor([[1.0, 2.0]])
    p = ad.parameter([[0.5, 0.5]])
    ad.backward(ad.total(ad.mul(c, p)))
    assert c.grad is None
    np.testing.assert_array_equal(p.grad, [[1.0, 2.0]])


def test_operator_overloads_match_functions():
    a = ad.Tensor([[1.0, 2.0]])
    b = ad.Tensor([[3.0, 5.0]])
    np.testing.assert_array_equal((a + b).value, [[4.0, 7.0]])
    np.testing.assert_array_equal((a - b).value, [[-2.0, -3.0]])
    np.testing.assert_array_equal((a * b).value, [[3.0, 10.0]])
    np.testing.assert_array_equal((-a).value, [[-1.0, -2.0]])
    np.testing.assert_array_equal((1.0 - a).value, [[0.0, -1.0]])


# --- finite-difference checks (a smaller sweep than the acceptance run) ------

@pytest.mark.parametrize("name", sorted(op_cases()))
def test_operation_gradients_match_finite_differences(name):
    fn, shapes = op_cases()[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(10):
        inputs = [away_from_zero(rng, s) for s in shapes]
        assert check_gradients(fn, inputs, rng) < REL_TOL
