"""Unit and finite-difference tests for the autodiff engine."""

import numpy as np
import numpy.testing as npt
import pytest

from phenovit import numeric as num
from phenovit.errors import ConfigError, DataError, ShapeError, UsageError


def test_matmul_identity():
    a = num.Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = num.Tensor([[3.0, 4.0], [5.0, 6.0]])
    npt.assert_array_equal(num.matmul(a, b).data, b.data)


def test_matmul_row_by_column():
    out = num.matmul(num.Tensor([[1.0, 2.0]]), num.Tensor([[3.0], [4.0]]))
    npt.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        num.matmul(num.Tensor(np.zeros((2, 3))), num.Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = num.parameter(rng.normal(size=(4, 5)))
    b = num.parameter(rng.normal(size=(5, 3)))
    result = num.check_gradients(lambda a, b: num.sum_all(num.matmul(a, b)),
                                 [a, b], eps=1e-5)
    assert result.max_rel_error < 1e-6, result


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(3)
    a = num.parameter(rng.normal(size=(2, 3, 4)))
    b = num.parameter(rng.normal(size=(4, 5)))
    result = num.check_gradients(lambda a, b: num.sum_all(num.matmul(a, b)),
                                 [a, b], eps=1e-5)
    assert result.max_rel_error < 1e-6, result


def test_layer_norm_constant_row_maps_to_zero():
    x = num.Tensor([[4.2, 4.2, 4.2, 4.2]])
    out = num.layer_norm(x, num.Tensor(np.ones(4)), num.Tensor(np.zeros(4)), eps=1e-5)
    npt.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_already_standardized_row():
    x = num.Tensor([[1.0, -1.0]])
    out = num.layer_norm(x, num.Tensor(np.ones(2)), num.Tensor(np.zeros(2)), eps=0.0)
    npt.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-12)


def test_layer_norm_standardizes_random_row():
    rng = np.random.default_rng(3)
    x = num.Tensor(rng.normal(loc=2.0, scale=3.0, size=(1, 16)))
    out = num.layer_norm(x, num.Tensor(np.ones(16)), num.Tensor(np.zeros(16)), eps=0.0)
    assert abs(out.data.mean()) < 1e-12
    assert abs(out.data.var() - 1.0) < 1e-9


def test_layer_norm_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    x = num.parameter(rng.normal(size=(2, 8)))
    gain = num.parameter(rng.normal(size=8))
    bias = num.parameter(rng.normal(size=8))

    def f(x, gain, bias):
        y = num.layer_norm(x, gain, bias, 1e-5)
        return num.sum_all(num.mul(y, y))

    result = num.check_gradients(f, [x, gain, bias], eps=1e-5)
    assert result.max_rel_error < 1e-6, result


def test_softmax_uniform_on_equal_inputs():
    out = num.softmax(num.Tensor([0.0, 0.0, 0.0]))
    npt.assert_allclose(out.data, np.full(3, 1 / 3), atol=1e-15)


def test_softmax_saturated_is_stable():
    out = num.softmax(num.Tensor([1000.0, 0.0]))
    npt.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)
    assert np.isfinite(out.data).all()


def test_softmax_direct_evaluation():
    out = num.softmax(num.Tensor([1.0, 2.0, 3.0]))
    npt.assert_allclose(out.data, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_softmax_rows_sum_to_one_for_large_magnitudes():
    rng = np.random.default_rng(0)
    x = num.Tensor(rng.uniform(-1e3, 1e3, size=(64, 9)))
    sums = num.softmax(x).data.sum(axis=-1)
    npt.assert_allclose(sums, np.ones(64), atol=1e-9)


def test_gelu_zero_and_asymptote():
    assert num.gelu(num.Tensor([0.0])).data[0] == 0.0
    x = np.array([6.0, 8.0, 12.0])
    npt.assert_allclose(num.gelu(num.Tensor(x)).data, x, atol=1e-6)


def test_gelu_gradient_at_fixed_points():
    for v in (-2.0, -0.5, 0.5, 2.0):
        x = num.parameter(np.array([v]))
        result = num.check_gradients(lambda x: num.sum_all(num.gelu(x)), [x], eps=1e-5)
        assert result.max_rel_error < 1e-5, (v, result)


def test_dropout_rate_zero_is_identity():
    x = num.Tensor(np.arange(6.0))
    out = num.dropout(x, 0.0, training=True, rng=np.random.default_rng(0))
    assert out is x


def test_dropout_eval_mode_is_identity():
    x = num.Tensor(np.arange(6.0))
    assert num.dropout(x, 0.9, training=False) is x


def test_dropout_mask_statistics_and_scaling():
    rng = np.random.default_rng(11)
    x = num.Tensor(np.full(1_000_000, 3.0))
    out = num.dropout(x, 0.1, training=True, rng=rng)
    survivors = out.data != 0.0
    assert abs(survivors.mean() - 0.9) < 0.002
    npt.assert_allclose(out.data[survivors], 3.0 / 0.9, rtol=1e-12)


def test_dropout_rejects_bad_rate():
    x = num.Tensor([1.0])
    for rate in (-0.1, 1.0, 1.5):
        with pytest.raises(ConfigError):
            num.dropout(x, rate, training=True, rng=np.random.default_rng(0))


def test_cross_entropy_uniform_logits():
    loss = num.cross_entropy(num.Tensor([[0.0, 0.0]]), np.array([0]))
    npt.assert_allclose(loss.item(), np.log(2.0), atol=1e-12)


def test_cross_entropy_saturated_no_overflow():
    loss = num.cross_entropy(num.Tensor([[40.0, -40.0]]), np.array([0]))
    assert 0.0 <= loss.item() < 1e-12


def test_cross_entropy_label_out_of_range_names_sample():
    with pytest.raises(DataError, match="sample 1"):
        num.cross_entropy(num.Tensor(np.zeros((3, 2))), np.array([0, 5, 1]))


def test_cross_entropy_gradient_is_probs_minus_onehot():
    rng = np.random.default_rng(9)
    logits = num.parameter(rng.normal(size=(4, 5)))
    labels = np.array([0, 3, 2, 1])
    loss = num.cross_entropy(logits, labels)
    num.backward(loss)
    probs = num.softmax(num.Tensor(logits.data)).data
    expected = probs.copy()
    expected[np.arange(4), labels] -= 1.0
    npt.assert_allclose(logits.grad, expected / 4.0, atol=1e-12)

    logits2 = num.parameter(logits.data.copy())
    result = num.check_gradients(
        lambda l: num.cross_entropy(l, labels), [logits2], eps=1e-5)
    assert result.max_rel_error < 1e-5, result


def test_check_gradients_sum_is_exact():
    # integer data with a power-of-two step keeps the difference quotient exact
    x = num.parameter(np.arange(12.0).reshape(3, 4))
    result = num.check_gradients(lambda x: num.sum_all(x), [x], eps=2.0 ** -12)
    assert result.max_rel_error == 0.0


def test_check_gradients_rejects_bad_usage():
    x = num.parameter(np.ones(3))
    with pytest.raises(UsageError):
        num.check_gradients(lambda x: num.sum_all(x), [x], eps=1e-2)
    with pytest.raises(UsageError):
        num.check_gradients(lambda x: num.mul(x, x), [x], eps=1e-5)
    y = num.Tensor(np.ones(3))
    with pytest.raises(UsageError):
        num.check_gradients(lambda y: num.sum_all(y), [y], eps=1e-5)


def test_gradients_accumulate_across_paths():
    # the same tensor used twice collects the sum of both path gradients
    x1 = num.parameter(np.array([[1.0, 2.0, 3.0]]))
    num.backward(num.sum_all(num.mul(x1, x1)))
    x2 = num.parameter(np.array([[1.0, 2.0, 3.0]]))
    num.backward(num.sum_all(num.matmul(x2, num.transpose(x2, (1, 0)))))
    npt.assert_allclose(x1.grad, [[2.0, 4.0, 6.0]], atol=1e-12)
    npt.assert_allclose(x2.grad, x1.grad, atol=1e-12)


def test_record_is_topologically_ordered():
    x = num.parameter(np.ones((2, 2)))
    y = num.mul(x, x)
    z = num.add(y, x)
    loss = num.sum_all(z)
    record = num.record_of(loss)
    positions = {id(rec.output): i for i, rec in enumerate(record)}
    for rec in record:
        for parent in rec.inputs:
            if parent.op is not None:
                assert positions[id(parent)] < positions[id(rec.output)]


def test_operations_are_deterministic():
    def run():
        rng = np.random.default_rng(123)
        x = num.parameter(rng.normal(size=(5, 6)))
        w = num.parameter(rng.normal(size=(6, 4)))
        out = num.softmax(num.gelu(num.matmul(x, w)))
        loss = num.sum_all(num.mul(out, out))
        num.backward(loss)
        return out.data.copy(), x.grad.copy()

    out1, grad1 = run()
    out2, grad2 = run()
    assert np.array_equal(out1, out2)
    assert np.array_equal(grad1, grad2)


def test_values_stay_finite_through_forward_and_backward():
    rng = np.random.default_rng(2)
    x = num.parameter(rng.uniform(-50.0, 50.0, size=(8, 16)))
    w = num.parameter(rng.normal(size=(16, 16)))
    h = num.softmax(num.matmul(x, w))
    h = num.layer_norm(h, num.parameter(np.ones(16)), num.parameter(np.zeros(16)), 1e-5)
    loss = num.cross_entropy(num.matmul(h, w), np.zeros(8, dtype=int))
    assert np.isfinite(loss.data).all()
    num.backward(loss)
    assert np.isfinite(x.grad).all()
    assert np.isfinite(w.grad).all()


def test_flop_counter_conventions():
    with num.flop_counter() as counter:
        num.matmul(num.Tensor(np.zeros((1, 507))), num.Tensor(np.zeros((507, 256))))
    assert counter.total == 2 * 507 * 256

    x = num.Tensor(np.zeros((3, 4)))
    with num.flop_counter() as counter:
        num.layer_norm(x, num.Tensor(np.ones(4)), num.Tensor(np.zeros(4)), 1e-5)
        num.softmax(x)
        num.gelu(x)
        num.add(x, x)
    assert counter.by_op["layer_norm"] == 8 * 12
    assert counter.by_op["softmax"] == 5 * 12
    assert counter.by_op["gelu"] == 10 * 12
    assert counter.by_op["add"] == 12
