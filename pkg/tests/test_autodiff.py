import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchmixer.autodiff import SGD, Tensor, cosine_lr, count_params, grad_check, no_grad
from patchmixer.autodiff import functional as F
from patchmixer.autodiff.nn import BatchNorm, Dropout, LayerNorm, Linear, Module, PatchMix
from patchmixer.autodiff.tensor import NonFiniteError

from .conftest import t64

dims = st.integers(min_value=3, max_value=8)


# -- tensor core ----------------------------------------------------------------

def test_default_dtype_is_float32_and_float64_is_kept():
    assert Tensor([1, 2]).dtype == np.float32
    assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64


def test_backward_accumulates_through_shared_nodes():
    x = t64([2.0, -1.0])
    y = x * x + x          # dy/dx = 2x + 1
    F.sum(y).backward()
    np.testing.assert_allclose(x.grad, [5.0, -1.0])


def test_leaf_grad_accumulates_across_calls():
    x = t64([1.0, 2.0])
    F.sum(x * 3.0).backward()
    F.sum(x * 2.0).backward()
    np.testing.assert_allclose(x.grad, [5.0, 5.0])


def test_no_grad_records_nothing():
    x = t64([1.0])
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    with pytest.raises(RuntimeError):
        y.backward()


def test_non_scalar_backward_needs_grad():
    x = t64([1.0, 2.0])
    with pytest.raises(RuntimeError):
        (x * 2.0).backward()


@given(st.tuples(dims, dims), st.booleans())
def test_broadcast_add_mul_gradients(shape, row):
    rng = np.random.default_rng(0)
    a = t64(rng.normal(size=shape))
    b = t64(rng.normal(size=(1, shape[1]) if row else (shape[0], 1)))
    w = rng.normal(size=shape)
    err = grad_check(lambda: F.sum((a * b + b - a) * Tensor(w, dtype=np.float64)), [a, b], h=1e-6)
    assert err <= 1e-8


def test_shape_ops_gradients(rng):
    a = t64(rng.normal(size=(3, 4, 5)))
    w = rng.normal(size=(5, 12))

    def f():
        x = F.transpose(a, (2, 0, 1)).reshape(5, 12)
        y = F.concat([x, F.broadcast_to(F.mean(a, axis=(0, 1)).reshape(5, 1), (5, 12))], axis=0)
        return F.sum(y * Tensor(np.vstack([w, w]), dtype=np.float64))

    assert grad_check(f, [a], h=1e-6) <= 1e-8


# -- matmul / linear ----------------------------------------------------------------

def test_matmul_hand_cases():
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal(F.matmul(eye, eye).data, np.eye(2))
    out = F.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = t64(rng.normal(size=(5, 4))), t64(rng.normal(size=(4, 3)))
    assert grad_check(lambda: F.sum(F.matmul(a, b)), [a, b], h=1e-6) <= 1e-4


def test_linear_hand_cases(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    out = F.linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, x.data)
    out = F.linear(Tensor([1.0, 1.0]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
    np.testing.assert_array_equal(out.data, [6.0])
    with pytest.raises(ValueError):
        F.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_linear_gradient_on_batched_input(rng):
    lin = Linear(4, 3, rng).to(np.float64)
    x = t64(rng.normal(size=(2, 5, 4)))
    w = rng.normal(size=(2, 5, 3))
    err = grad_check(lambda: F.sum(lin(x) * Tensor(w, dtype=np.float64)), [x, lin.weight, lin.bias], h=1e-6)
    assert err <= 1e-4


def test_count_params_single_linear(rng):
    assert count_params(Linear(4, 3, rng)) == 15


# -- normalisation -----------------------------------------------------------------

def test_batchnorm_constant_input_gives_beta():
    bn = BatchNorm(3)
    bn.beta.data[:] = [0.5, -1.0, 2.0]
    out = bn(Tensor(np.full((6, 3), 4.0)))
    np.testing.assert_allclose(out.data, np.tile([0.5, -1.0, 2.0], (6, 1)), atol=1e-6)


def test_batchnorm_already_normalised_is_identity(rng):
    x = rng.normal(size=(200, 3))
    x = (x - x.mean(0)) / x.std(0)
    out = BatchNorm(3).to(np.float64)(Tensor(x))
    # the only deviation is the eps term: x / sqrt(1 + eps)
    np.testing.assert_allclose(out.data, x, rtol=1e-5, atol=0)


def test_batchnorm_running_stat_update(rng):
    bn = BatchNorm(2).to(np.float64)
    x = rng.normal(loc=3.0, scale=2.0, size=(10, 2))
    bn(Tensor(x))
    m = 0.1
    np.testing.assert_allclose(bn.running_mean, (1 - m) * 0 + m * x.mean(0), rtol=1e-12)
    np.testing.assert_allclose(bn.running_var, (1 - m) * 1 + m * x.var(0, ddof=1), rtol=1e-12)


def test_batchnorm_eval_uses_running_stats(rng):
    bn = BatchNorm(2).to(np.float64).eval()
    bn.running_mean[:] = [1.0, 2.0]
    bn.running_var[:] = [4.0, 9.0]
    out = bn(Tensor(np.array([[3.0, 5.0]])))
    np.testing.assert_allclose(out.data, [[2 / math.sqrt(4 + 1e-5), 3 / math.sqrt(9 + 1e-5)]])


def test_batchnorm_single_value_train_error():
    with pytest.raises(ValueError):
        BatchNorm(3)(Tensor(np.ones((1, 3))))


@given(st.tuples(dims, dims, dims), st.sampled_from([1, -1]))
def test_batchnorm_gradient(shape, axis):
    rng = np.random.default_rng(sum(shape))
    bn = BatchNorm(shape[axis], axis=axis).to(np.float64)
    bn.gamma.data[:] = rng.normal(size=shape[axis])
    x = t64(rng.normal(size=shape))
    w = rng.normal(size=shape)
    err = grad_check(lambda: F.sum(bn(x) * Tensor(w, dtype=np.float64)), [x, bn.gamma, bn.beta], h=1e-6)
    assert err <= 1e-4


def test_layernorm_hand_cases():
    ln = LayerNorm(3)
    ln.beta.data[:] = [1.0, 2.0, 3.0]
    np.testing.assert_allclose(ln(Tensor([1.0, 1.0, 1.0])).data, [1.0, 2.0, 3.0])
    out = LayerNorm(2)(Tensor([-1.0, 1.0])).data
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-5)
    with pytest.raises(ValueError):
        LayerNorm(4)(Tensor([1.0, 2.0]))


@given(st.tuples(dims, dims))
def test_layernorm_gradient(shape):
    rng = np.random.default_rng(shape[0] * 10 + shape[1])
    ln = LayerNorm(shape[1]).to(np.float64)
    ln.gamma.data[:] = rng.normal(size=shape[1])
    x = t64(rng.normal(size=shape))
    w = rng.normal(size=shape)
    assert grad_check(lambda: F.sum(ln(x) * Tensor(w, dtype=np.float64)), [x, ln.gamma, ln.beta], h=1e-6) <= 1e-4


# -- activations / dropout ---------------------------------------------------------

def test_activation_values():
    np.testing.assert_array_equal(F.relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])
    assert F.sigmoid(Tensor([0.0])).data[0] == 0.5
    s = F.sigmoid(Tensor(np.linspace(-15, 15, 101))).data
    assert np.all((s > 0) & (s < 1))
    assert np.all(np.isfinite(F.sigmoid(Tensor([-1e4, 1e4])).data))


def test_sigmoid_gradient(rng):
    x = t64(rng.normal(size=(4, 5)) * 3)
    assert grad_check(lambda: F.sum(F.sigmoid(x)), [x], h=1e-6) <= 1e-4
    s = 1 / (1 + np.exp(-x.data))
    F.sum(F.sigmoid(x)).backward()
    np.testing.assert_allclose(x.grad, s * (1 - s), rtol=1e-12)


def test_dropout_identity_cases(rng):
    x = Tensor(rng.normal(size=(10, 10)))
    assert Dropout(0.0)(x, rng) is x
    d = Dropout(0.7).eval()
    assert d(x) is x
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_rate_and_scaling():
    rng = np.random.default_rng(7)
    out = F.dropout(Tensor(np.ones(10**6)), 0.3, True, rng).data
    assert abs((out == 0).mean() - 0.3) <= 1e-2
    np.testing.assert_allclose(out[out != 0], 1 / 0.7, rtol=1e-6)


# -- max, patch mixing, cross entropy ----------------------------------------------------

def test_max_over_axis_cases():
    x = t64([[1.0, 5.0], [3.0, 2.0]])
    out, _ = F.max_over_axis(x, axis=0)
    np.testing.assert_array_equal(out.data, [3.0, 5.0])
    single, _ = F.max_over_axis(t64([[4.0, 2.0]]), axis=0)
    np.testing.assert_array_equal(single.data, [4.0, 2.0])
    tie = t64([2.0, 2.0])
    F.sum(F.max_over_axis(tie, axis=0)[0]).backward()
    np.testing.assert_array_equal(tie.grad, [1.0, 0.0])


def test_max_over_axis_mask():
    x = t64([[9.0, 1.0], [2.0, 3.0]])
    out, _ = F.max_over_axis(x, axis=0, where=np.array([[False], [True]]))
    np.testing.assert_array_equal(out.data, [2.0, 3.0])
    with pytest.raises(ValueError):
        F.max_over_axis(x, axis=0, where=np.zeros((2, 1), dtype=bool))


def test_patch_axis_mix_cases(rng):
    x = Tensor(rng.normal(size=(2, 2, 3)))
    out = F.patch_axis_mix(x, Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, x.data)
    swapped = F.patch_axis_mix(x, Tensor([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(swapped.data, x.data[:, ::-1])
    with pytest.raises(ValueError):
        F.patch_axis_mix(x, Tensor(np.eye(3)))


def test_patch_axis_mix_gradient(rng):
    pm = PatchMix(4, rng).to(np.float64)
    x = t64(rng.normal(size=(3, 4, 5)))
    w = rng.normal(size=(3, 4, 5))
    assert grad_check(lambda: F.sum(pm(x) * Tensor(w, dtype=np.float64)), [x, pm.weight, pm.bias], h=1e-6) <= 1e-4


def test_cross_entropy_cases():
    loss = F.softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
    assert abs(float(loss.data) - math.log(4)) < 1e-6
    logits = np.zeros((2, 3))
    logits[[0, 1], [2, 0]] = 1000.0
    assert float(F.softmax_cross_entropy(Tensor(logits), [2, 0]).data) < 1e-6
    with pytest.raises(ValueError):
        F.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_cross_entropy_gradient_is_softmax_minus_onehot(rng):
    z = t64(rng.normal(size=(5, 4)))
    y = np.array([0, 3, 1, 1, 2])
    F.softmax_cross_entropy(z, y).backward()
    p = np.exp(z.data) / np.exp(z.data).sum(1, keepdims=True)
    p[np.arange(5), y] -= 1
    np.testing.assert_allclose(z.grad, p / 5, atol=1e-12)


def test_non_finite_loss_raises():
    with pytest.raises(NonFiniteError):
        F.softmax_cross_entropy(Tensor(np.array([[np.nan, 0.0]])), [0])


# -- grad_check itself --------------------------------------------------------------

def test_grad_check_exact_on_linear_function(rng):
    x = t64(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    assert grad_check(lambda: F.sum(x * Tensor(w, dtype=np.float64)), [x]) <= 1e-8


def test_grad_check_detects_wrong_gradient(rng):
    x = t64(rng.normal(size=4))
    bad = lambda: Tensor._make(x.data ** 2, (x,), lambda g: (g * x.data,))  # missing factor 2  # noqa: E731
    assert grad_check(lambda: F.sum(bad()), [x]) > 1e-2


def test_two_layer_block_gradient(rng):
    l1, l2 = Linear(5, 6, rng).to(np.float64), Linear(6, 3, rng).to(np.float64)
    x = t64(rng.normal(size=(4, 5)))
    f = lambda: F.sum(F.sigmoid(l2(F.relu(l1(x)))))  # noqa: E731
    assert grad_check(f, [x, *l1.parameters(), *l2.parameters()], h=1e-6) <= 1e-4


# -- modules --------------------------------------------------------------------------

class _Net(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Linear(3, 4, rng)
        self.norm = BatchNorm(4)
        self.second = Linear(4, 2, rng)


def test_module_names_are_ordered_and_unique(rng):
    names = [n for n, _ in _Net(rng).named_parameters()]
    assert names == ["first.weight", "first.bias", "norm.gamma", "norm.beta", "second.weight", "second.bias"]
    assert [n for n, _ in _Net(rng).named_buffers()] == ["norm.running_mean", "norm.running_var"]


def test_state_dict_round_trip_and_shape_check(rng):
    a, b = _Net(rng), _Net(rng)
    b.load_state_dict(a.state_dict())
    for (_, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
        np.testing.assert_array_equal(x, y)
    bad = a.state_dict()
    bad["first.weight"] = np.zeros((2, 2))
    with pytest.raises(ValueError):
        b.load_state_dict(bad)
    with pytest.raises(KeyError):
        b.load_state_dict({})


# -- optimiser and schedule -------------------------------------------------------------

def test_sgd_lr_zero_keeps_params():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    p.grad = np.array([10.0, 3.0], dtype=np.float32)
    SGD([("p", p)], lr=0.0).step()
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert p.grad is None


def test_sgd_plain_step():
    p = Tensor(np.array([5.0]), requires_grad=True, dtype=np.float64)
    p.grad = np.array([2.0])
    SGD([("p", p)], lr=1.0, momentum=0.0, weight_decay=0.0).step()
    assert p.data[0] == 3.0


def test_sgd_two_nesterov_steps_match_hand_recurrence():
    p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    opt = SGD([("p", p)], lr=0.1, momentum=0.9, weight_decay=0.01)
    grads = [0.5, -0.25]
    value, v = 1.0, 0.0
    for g_raw in grads:
        p.grad = np.array([g_raw])
        opt.step()
        g = g_raw + 0.01 * value
        v = 0.9 * v + g
        value = value - 0.1 * (g + 0.9 * v)
    assert abs(p.data[0] - value) <= 1e-15


def test_sgd_missing_grad_raises():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(RuntimeError):
        SGD([("p", p)]).step()


def test_cosine_schedule_points():
    assert cosine_lr(0, 200) == 1e-2
    assert cosine_lr(200, 200) == 1e-4
    assert abs(cosine_lr(100, 200) - 5.05e-3) < 1e-15


@given(st.integers(1, 500), st.data())
def test_cosine_schedule_closed_form(total, data):
    t = data.draw(st.integers(0, total))
    expected = 1e-4 + 0.5 * (1e-2 - 1e-4) * (1 + math.cos(math.pi * t / total))
    assert abs(cosine_lr(t, total) - expected) <= 1e-15
