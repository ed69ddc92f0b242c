"""Autodiff core: forward oracles and finite-difference gradient checks.

Every differentiable op is checked against central finite differences
at float64; forward values are checked against hand or brute-force
oracles."""

import numpy as np
import pytest

import gmic.tensor as T
from gmic.errors import ShapeError
from gmic.tensor import Tensor, finite_difference_check


def t64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


# -- conv2d -------------------------------------------------------------------


def test_conv_identity_kernel():
    x = t64(np.arange(9.0).reshape(1, 1, 3, 3), requires_grad=False)
    w = t64([[[[1.0]]]], requires_grad=False)
    out = T.conv2d(x, w, stride=1, padding=0)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv_ones_kernel_constant_image():
    c = 0.7
    x = t64(np.full((1, 1, 5, 5), c), requires_grad=False)
    w = t64(np.ones((1, 1, 3, 3)), requires_grad=False)
    out = T.conv2d(x, w, stride=1, padding=1)
    assert out.shape == (1, 1, 5, 5)
    np.testing.assert_allclose(out.data[0, 0, 1:-1, 1:-1], 9 * c, rtol=1e-12)


def _direct_conv(x, w, stride, padding):
    # independent oracle: direct summation over every output location
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for y in range(oh):
                for xx in range(ow):
                    patch = xp[ni, :, y * stride : y * stride + kh, xx * stride : xx * stride + kw]
                    out[ni, oi, y, xx] = (patch * w[oi]).sum()
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_direct_summation(stride, padding, rng):
    x = rng.normal(size=(2, 3, 6, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    out = T.conv2d(t64(x, False), t64(w, False), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, _direct_conv(x, w, stride, padding), atol=1e-12)


def test_conv_gradient_check(rng):
    x = t64(rng.normal(size=(1, 1, 4, 4)))
    w = t64(rng.normal(size=(2, 1, 3, 3)))
    err = finite_difference_check(lambda a, b: T.sum_all(T.conv2d(a, b, 1, 1)), [x, w])
    assert err < 1e-6


def test_conv_strided_gradient_check(rng):
    x = t64(rng.normal(size=(2, 3, 6, 6)))
    w = t64(rng.normal(size=(4, 3, 3, 3)))
    err = finite_difference_check(
        lambda a, b: T.sum_all(T.mul(T.conv2d(a, b, 2, 1), T.conv2d(a, b, 2, 1))), [x, w]
    )
    assert err < 1e-6


def test_conv_shape_error_names_both_shapes():
    x = t64(np.zeros((1, 2, 4, 4)), False)
    w = t64(np.zeros((1, 3, 3, 3)), False)
    with pytest.raises(ShapeError) as exc:
        T.conv2d(x, w)
    assert "(1, 2, 4, 4)" in str(exc.value) and "(1, 3, 3, 3)" in str(exc.value)


# -- batchnorm2d ------------------------------------------------------------------


def _bn_args(channels, dtype=np.float64):
    gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
    beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
    return gamma, beta, np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype)


def test_batchnorm_identity_on_standardized_input(rng):
    x = rng.normal(size=(4, 2, 3, 3))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    gamma, beta, rm, rv = _bn_args(2)
    out = T.batchnorm2d(t64(x, False), gamma, beta, rm, rv, training=True)
    np.testing.assert_allclose(out.data, x, atol=1e-4)


def test_batchnorm_constant_channel_gives_beta():
    x = np.full((3, 2, 4, 4), 5.0)
    gamma, beta, rm, rv = _bn_args(2)
    beta.data[...] = (1.5, -2.0)
    out = T.batchnorm2d(t64(x, False), gamma, beta, rm, rv, training=True)
    np.testing.assert_allclose(out.data[:, 0], 1.5, atol=1e-6)
    np.testing.assert_allclose(out.data[:, 1], -2.0, atol=1e-6)


def test_batchnorm_gradient_check(rng):
    x = t64(rng.normal(size=(2, 3, 4, 4)))
    gamma = t64(rng.uniform(0.5, 1.5, 3))
    beta = t64(rng.normal(size=3))
    weights = rng.normal(size=(2, 3, 4, 4))  # generic loss; sum(out^2) is BN-invariant

    def fn(a, g, b):
        rm, rv = np.zeros(3), np.ones(3)
        out = T.batchnorm2d(a, g, b, rm, rv, training=True)
        return T.sum_all(T.mul(out, weights))

    assert finite_difference_check(fn, [x, gamma, beta]) < 1e-5


def test_batchnorm_eval_mode_gradient_and_running_stats(rng):
    x = rng.normal(size=(4, 2, 3, 3))
    gamma, beta, rm, rv = _bn_args(2)
    T.batchnorm2d(t64(x, False), gamma, beta, rm, rv, training=True)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(
        rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1), atol=1e-12)

    xg = t64(rng.normal(size=(1, 2, 3, 3)))
    gamma2 = t64(rng.uniform(0.5, 1.5, 2))
    beta2 = t64(rng.normal(size=2))
    err = finite_difference_check(
        lambda a, g, b: T.sum_all(T.batchnorm2d(a, g, b, rm, rv, training=False)), [xg, gamma2, beta2])
    assert err < 1e-6


def test_batchnorm_batch_of_one_errors_in_train_mode():
    gamma, beta, rm, rv = _bn_args(2)
    with pytest.raises(ShapeError):
        T.batchnorm2d(t64(np.zeros((1, 2, 3, 3)), False), gamma, beta, rm, rv, training=True)


# -- activations ------------------------------------------------------------------


def test_sigmoid_at_zero():
    assert T.sigmoid(t64(0.0, False)).item() == 0.5


def test_relu_negative_is_zero(rng):
    x = rng.uniform(0.1, 3.0, 20)
    out = T.activation(t64(-x, False), "relu")
    np.testing.assert_array_equal(out.data, 0.0)


def test_sigmoid_stable_at_extremes():
    out = T.sigmoid(t64([-500.0, 500.0], False))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)


def test_tanh_gradient_check(rng):
    x = t64(rng.normal(size=12))
    err = finite_difference_check(lambda a: T.sum_all(T.mul(T.tanh(a), T.tanh(a))), [x], step=1e-6)
    assert err < 1e-8


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
def test_activation_gradient_checks(kind, rng):
    x = rng.normal(size=15)
    x = x + np.sign(x) * 0.05  # keep away from the relu kink
    err = finite_difference_check(lambda a: T.sum_all(T.mul(T.activation(a, kind), a)), [t64(x)])
    assert err < 1e-6


def test_activation_unknown_kind():
    from gmic.errors import ConfigError
    with pytest.raises(ConfigError):
        T.activation(t64(0.0, False), "gelu")


# -- linear -------------------------------------------------------------------------


def test_linear_identity():
    x = t64(np.arange(6.0).reshape(2, 3), False)
    w = t64(np.eye(3), False)
    b = t64(np.zeros(3), False)
    np.testing.assert_array_equal(T.linear(x, w, b).data, x.data)


def test_linear_hand_case():
    out = T.linear(t64([[1.0, 2.0]], False), t64([[1.0], [1.0]], False))
    np.testing.assert_array_equal(out.data, [[3.0]])


def test_linear_gradient_check(rng):
    x = t64(rng.normal(size=(3, 4)))
    w = t64(rng.normal(size=(4, 2)))
    b = t64(rng.normal(size=2))
    err = finite_difference_check(
        lambda a, ww, bb: T.sum_all(T.mul(T.linear(a, ww, bb), T.linear(a, ww, bb))), [x, w, b])
    assert err < 1e-6


def test_linear_dimension_error():
    with pytest.raises(ShapeError):
        T.linear(t64(np.zeros((2, 3)), False), t64(np.zeros((4, 2)), False))


# -- pooling -------------------------------------------------------------------------


def test_global_max_pool_constant_ties_to_first_element():
    x = t64(np.full((1, 1, 3, 3), 2.5))
    out = T.global_max_pool(x)
    assert out.item() == 2.5
    T.sum_all(out).backward()
    expected = np.zeros((1, 1, 3, 3))
    expected[0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_global_max_pool_spike():
    x = np.full((1, 2, 4, 4), -2.0)
    x[0, 0, 2, 3] = 7.0
    x[0, 1, 1, 1] = -1.0
    out = T.global_max_pool(t64(x, False))
    np.testing.assert_array_equal(out.data, [[7.0, -1.0]])


def test_global_max_pool_gradient_check(rng):
    vals = rng.permutation(16).astype(np.float64).reshape(1, 1, 4, 4)  # distinct values
    x = t64(vals)
    err = finite_difference_check(lambda a: T.sum_all(T.mul(T.global_max_pool(a), T.global_max_pool(a))), [x])
    assert err < 1e-6


def test_global_avg_pool_gradient_check(rng):
    x = t64(rng.normal(size=(2, 3, 4, 4)))
    err = finite_difference_check(lambda a: T.sum_all(T.mul(T.global_avg_pool(a), T.global_avg_pool(a))), [x])
    assert err < 1e-6


# -- elementwise / shaping ops -------------------------------------------------------


@pytest.mark.parametrize("op", ["add", "mul", "sub"])
def test_broadcast_arithmetic_gradient_checks(op, rng):
    a = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=(4,)))
    fn = {
        "add": lambda x, y: T.sum_all(T.mul(T.add(x, y), T.add(x, y))),
        "mul": lambda x, y: T.sum_all(T.mul(T.mul(x, y), T.mul(x, y))),
        "sub": lambda x, y: T.sum_all(T.mul(x - y, x - y)),
    }[op]
    assert finite_difference_check(fn, [a, b]) < 1e-6


def test_log_exp_clamp_gradient_checks(rng):
    x = t64(rng.uniform(0.2, 0.8, 10))
    assert finite_difference_check(lambda a: T.sum_all(T.log(a)), [x]) < 1e-7
    assert finite_difference_check(lambda a: T.sum_all(T.exp(a)), [x]) < 1e-7
    assert finite_difference_check(lambda a: T.sum_all(T.mul(T.clamp(a, 0.3, 0.7), a)), [x]) < 1e-6


def test_softmax_gradient_check(rng):
    x = t64(rng.normal(size=(2, 5)))
    w = rng.normal(size=(2, 5))
    err = finite_difference_check(lambda a: T.sum_all(T.mul(T.softmax(a, axis=-1), w)), [x])
    assert err < 1e-6


def test_softmax_rows_sum_to_one(rng):
    out = T.softmax(t64(rng.normal(size=(4, 7)) * 50, False), axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)


def test_concat_reshape_sum_axis_gradient_checks(rng):
    a = t64(rng.normal(size=(2, 3)))
    b = t64(rng.normal(size=(2, 2)))

    def fn(x, y):
        cat = T.concat([x, y], axis=1)
        return T.sum_all(T.mul(T.reshape(cat, (10,)), T.reshape(cat, (10,))))

    assert finite_difference_check(fn, [a, b]) < 1e-6
    c = t64(rng.normal(size=(2, 3, 4)))
    assert finite_difference_check(lambda x: T.sum_all(T.mul(T.sum_axis(x, 1), T.sum_axis(x, 1))), [c]) < 1e-6


# -- backward engine contract ----------------------------------------------------------


def test_backward_sum_gives_ones(rng):
    x = t64(rng.normal(size=(3, 4)))
    T.sum_all(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_sum_of_squares_gives_2x(rng):
    v = rng.normal(size=7)
    x = t64(v)
    T.sum_all(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2 * v, rtol=1e-12)


def test_backward_composite_graph_gradient_check(rng):
    x = t64(rng.normal(size=(1, 1, 5, 5)))
    w = t64(rng.normal(size=(2, 1, 3, 3)))
    lw = t64(rng.normal(size=(2 * 25, 3)))

    def fn(a, b, c):
        h = T.relu(T.conv2d(a, b, 1, 1))
        flat = T.reshape(h, (1, -1))
        return T.sum_all(T.mul(T.linear(flat, c), T.linear(flat, c)))

    assert finite_difference_check(fn, [x, w, lw]) < 1e-4


def test_backward_requires_scalar():
    x = t64(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        T.add(x, 1.0).backward()


def test_backward_consumes_graph(rng):
    x = t64(rng.normal(size=4))
    loss = T.sum_all(x)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_gradients_accumulate_across_shared_use(rng):
    v = rng.normal(size=5)
    x = t64(v)
    y = T.add(T.mul(x, 2.0), T.mul(x, 3.0))
    T.sum_all(y).backward()
    np.testing.assert_allclose(x.grad, np.full(5, 5.0), rtol=1e-12)


def test_repeated_backward_on_fresh_graph_is_bitwise_identical(rng):
    v = rng.normal(size=(1, 1, 4, 4))
    wv = rng.normal(size=(2, 1, 3, 3))
    grads = []
    for _ in range(2):
        x = Tensor(v.astype(np.float32), requires_grad=True)
        w = Tensor(wv.astype(np.float32), requires_grad=True)
        T.sum_all(T.relu(T.conv2d(x, w, 1, 1))).backward()
        grads.append((x.grad.copy(), w.grad.copy()))
    np.testing.assert_array_equal(grads[0][0], grads[1][0])
    np.testing.assert_array_equal(grads[0][1], grads[1][1])


def test_forward_deterministic(rng):
    v = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    wv = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    a = T.conv2d(Tensor(v), Tensor(wv), 2, 1).data
    b = T.conv2d(Tensor(v), Tensor(wv), 2, 1).data
    np.testing.assert_array_equal(a, b)


def test_no_grad_disables_recording(rng):
    x = t64(rng.normal(size=3))
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


def test_debug_checks_flag_nonfinite():
    from gmic.errors import NumericError
    T.set_debug_checks(True)
    try:
        with pytest.raises(NumericError):
            T.log(t64([-1.0], False))
    finally:
        T.set_debug_checks(False)


@pytest.mark.parametrize("seed", range(20))
def test_per_op_gradient_checks_across_seeds(seed):
    """Every differentiable op agrees with central differences over many
    seeds (rel. err < 1e-4, abs floor 1e-8, 64-bit)."""
    r = np.random.default_rng(seed)
    x = t64(r.normal(size=(2, 2, 4, 4)))
    w = t64(r.normal(size=(3, 2, 3, 3)))
    gamma = t64(r.uniform(0.5, 1.5, 3))
    beta = t64(r.normal(size=3))

    def fn(a, b, g, bb):
        h = T.conv2d(a, b, 1, 1)
        h = T.batchnorm2d(h, g, bb, np.zeros(3), np.ones(3), training=True)
        h = T.relu(h)
        pooled = T.concat([T.global_max_pool(h), T.global_avg_pool(h)], axis=1)
        sal = T.sigmoid(h)
        score = T.topk_mean_pool(sal, 0.25)
        return T.add(T.sum_all(T.softmax(pooled, axis=1)), T.sum_all(score))

    assert finite_difference_check(fn, [x, w, gamma, beta]) < 1e-4
