import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmnet.errors import ConfigError, ParseError, UsageError
from mmnet.tensor import (
    ConvParams,
    DenseLayer,
    GradientTape,
    Tensor,
    add,
    avg_pool2d,
    bce_with_logits,
    channel_sum,
    channels,
    concat,
    conv2d,
    grad_check,
    init_conv,
    l1_loss,
    linear,
    mlp_forward,
    mul,
    read_checkpoint,
    relu,
    scale,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sub,
    sum_all,
    write_checkpoint,
)
from oracles import conv2d_loops


def conv(kernel, bias, stride=1, pad=0):
    return ConvParams(Tensor(np.asarray(kernel, float)), Tensor(np.asarray(bias, float)), stride, pad)


# ---------------------------------------------------------------- conv2d


def test_identity_kernel_is_identity():
    x = np.random.default_rng(0).standard_normal((5, 6, 1))
    assert np.array_equal(conv2d(x, conv(np.ones((1, 1, 1, 1)), [0.0])).data, x)


def test_zero_kernel_gives_bias():
    x = np.random.default_rng(1).standard_normal((4, 4, 2))
    out = conv2d(x, conv(np.zeros((3, 2, 3, 3)), [0.5, -1.0, 2.0], pad=1)).data
    assert np.array_equal(out, np.broadcast_to([0.5, -1.0, 2.0], (4, 4, 3)))


def test_ones_3x3_counts_neighbours():
    out = conv2d(np.ones((3, 3, 1)), conv(np.ones((1, 1, 3, 3)), [0.0], pad=1)).data[..., 0]
    assert out.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]
    ref = conv2d_loops(np.ones((3, 3, 1)), np.ones((1, 1, 3, 3)), np.zeros(1), 1, 1)[..., 0]
    assert np.array_equal(out, ref)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0), (5, 1, 2)])
def test_conv_matches_loop_oracle(seed, k, stride, pad):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 8, 3))
    kernel = rng.standard_normal((4, 3, k, k))
    bias = rng.standard_normal(4)
    out = conv2d(x, conv(kernel, bias, stride, pad)).data
    assert np.max(np.abs(out - conv2d_loops(x, kernel, bias, stride, pad))) <= 1e-12


def test_conv_batched_equals_per_item():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 8, 8, 3))
    p = init_conv(rng, 3, 5, 3, stride=2)
    out = conv2d(x, p).data
    for a in range(2):
        for b in range(3):
            assert np.allclose(out[a, b], conv2d(x[a, b], p).data, atol=1e-13)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(ConfigError, match="channel"):
        conv2d(np.zeros((4, 4, 2)), conv(np.zeros((1, 3, 3, 3)), [0.0], pad=1))


def test_conv_too_small_names_spatial_axes():
    with pytest.raises(ConfigError, match="spatial"):
        conv2d(np.zeros((2, 2, 1)), conv(np.zeros((1, 1, 5, 5)), [0.0]))


def test_conv_params_validation():
    with pytest.raises(ConfigError):
        conv(np.zeros((2, 1, 3, 3)), [0.0])
    with pytest.raises(ConfigError):
        conv(np.zeros((1, 1, 3, 3)), [0.0], stride=0)


# ---------------------------------------------------------------- softmax / MLP


def test_softmax_examples():
    assert np.allclose(softmax(np.zeros(3)).data, [1 / 3] * 3, atol=1e-15)
    assert np.allclose(softmax(np.array([np.log(2), 0, 0])).data, [0.5, 0.25, 0.25], atol=1e-15)


def test_softmax_empty_raises():
    with pytest.raises(UsageError):
        softmax(np.zeros(0))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)),
    st.floats(-50, 50),
)
def test_softmax_normalised_and_shift_invariant(x, k):
    s = softmax(x).data
    assert np.all(s >= 0) and abs(s.sum() - 1) <= 1e-9
    assert np.allclose(softmax(x + k).data, s, atol=1e-9)


def test_mlp_zero_and_identity():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    zero = [DenseLayer(Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)), "relu")]
    assert np.array_equal(mlp_forward(x, zero).data, np.zeros((2, 2)))
    ident = [DenseLayer(Tensor(np.eye(2)), Tensor(np.zeros(2)), "identity")]
    assert np.array_equal(mlp_forward(x, ident).data, x)


def test_mlp_two_layer_hand_value():
    w1, b1 = np.array([[1.0, 2.0], [-1.0, 1.0]]), np.array([0.5, 0.0])
    w2, b2 = np.array([[2.0, -1.0], [1.0, 1.0]]), np.array([0.0, 1.0])
    layers = [DenseLayer(Tensor(w1), Tensor(b1), "relu"), DenseLayer(Tensor(w2), Tensor(b2), "identity")]
    # hidden: relu([1 - 2 + .5, -1 - 1]) = [0, 0]; out = b2
    assert np.array_equal(mlp_forward(np.array([1.0, -1.0]), layers).data, [0.0, 1.0])
    # input (2, 1): hidden relu([4.5, -1]) = [4.5, 0]; out = [9, 5.5]
    assert np.array_equal(mlp_forward(np.array([2.0, 1.0]), layers).data, [9.0, 5.5])


def test_mlp_dim_mismatch():
    with pytest.raises(ConfigError):
        mlp_forward(np.zeros(3), [DenseLayer(Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))])


# ---------------------------------------------------------------- tape


def test_tape_accumulates_shared_input_once_per_use():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with GradientTape() as tape:
        y = sum_all(add(mul(x, x), x))
    tape.backward(y)
    assert np.array_equal(x.grad, [3.0, 5.0])


def test_no_tape_no_recording():
    x = Tensor(np.ones(2), requires_grad=True)
    y = sum_all(mul(x, x))
    assert float(y.data) == 2.0 and x.grad is None


# ---------------------------------------------------------------- grad_check


def test_grad_check_epsilon_range():
    with pytest.raises(UsageError):
        grad_check(lambda a: a, [np.ones(2)], epsilon=1e-3)


def test_grad_check_flags_wrong_gradient():
    from mmnet.tensor import _result, as_tensor

    def bad(a):
        a = as_tensor(a)
        return _result(a.data**2, (a,), lambda g: (g * a.data,))  # missing factor 2

    assert grad_check(bad, [np.array([1.0, 2.0])]) > 0.1


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_conv_linear(seed):
    rng = np.random.default_rng(seed)
    p = init_conv(rng, 2, 3, 3)
    err = grad_check(lambda x, k, b: conv2d(x, ConvParams(k, b, 1, 1)), [rng.standard_normal((5, 5, 2)), p.kernel.data, p.bias.data], seed=seed)
    assert err <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_sigmoid(seed):
    x = np.random.default_rng(seed).standard_normal((4, 3)) * 2
    assert grad_check(sigmoid, [x], seed=seed) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_softmax_mlp(seed):
    rng = np.random.default_rng(seed)
    w1, b1, w2, b2 = rng.standard_normal((6, 3)), rng.standard_normal(6), rng.standard_normal((3, 6)), rng.standard_normal(3)

    def f(x, w1, b1, w2, b2):
        layers = [DenseLayer(w1, b1, "relu"), DenseLayer(w2, b2, "identity")]
        return softmax(mlp_forward(x, layers), axis=-1)

    assert grad_check(f, [rng.standard_normal((4, 3)), w1, b1, w2, b2], seed=seed) <= 1e-5


def test_grad_check_misc_ops():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((4, 4, 6)), rng.standard_normal((4, 4, 6))
    assert grad_check(lambda a, b: sub(mul(a, b), scale(a, 3.0)), [a, b]) <= 1e-5
    assert grad_check(lambda a: channel_sum(a), [a]) <= 1e-5
    assert grad_check(lambda a: avg_pool2d(a, 2), [a]) <= 1e-5
    assert grad_check(lambda a, b: concat([channels(a, 1, 3), b], axis=-1), [a, b]) <= 1e-5
    assert grad_check(lambda a: relu(a), [a + np.sign(a) * 0.1]) <= 1e-5
    w, bias = rng.standard_normal((5, 6)), rng.standard_normal(5)
    assert grad_check(linear, [a, w, bias]) <= 1e-5


def test_grad_check_losses():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((3, 3, 4))
    labels = rng.integers(0, 4, size=(3, 3))
    mask = rng.random((3, 3)) > 0.4
    targets = (rng.random((3, 3, 4)) > 0.5).astype(float)
    assert grad_check(lambda z: bce_with_logits(z, targets, 3.0), [logits]) <= 1e-5
    assert grad_check(lambda z: softmax_cross_entropy(z, labels, mask, 2.0), [logits]) <= 1e-5
    pred = rng.standard_normal((3, 3, 4))
    assert grad_check(lambda p: l1_loss(p, pred + 0.3, mask, 2.0), [pred]) <= 1e-5


def test_loss_values():
    z = np.array([0.0, 2.0])
    t = np.array([1.0, 0.0])
    expected = np.log(2) + np.log1p(np.exp(2.0))
    assert abs(float(bce_with_logits(z, t).data) - expected) < 1e-12
    ce = softmax_cross_entropy(np.array([[np.log(2), 0, 0]]), np.array([0]), np.array([True]))
    assert abs(float(ce.data) - np.log(2)) < 1e-12


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_and_layout():
    tensors = {"a": np.arange(6.0).reshape(2, 3), "bias": np.array([1.5]), "s": np.array(2.0)}
    buf = io.BytesIO()
    write_checkpoint(buf, tensors)
    data = buf.getvalue()
    assert data[:4] == b"MMNT"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[8:12], "little") == 1 and data[12:13] == b"a"
    back = read_checkpoint(data)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape and np.array_equal(back[k], tensors[k])


def test_checkpoint_errors_carry_offset():
    buf = io.BytesIO()
    write_checkpoint(buf, {"w": np.ones((2, 2))})
    data = buf.getvalue()
    with pytest.raises(ParseError) as exc:
        read_checkpoint(b"XXXX" + data[4:])
    assert exc.value.offset == 0
    with pytest.raises(ParseError) as exc:
        read_checkpoint(data[:-3])
    assert exc.value.offset is not None


def test_init_is_seeded():
    a = init_conv(np.random.default_rng(9), 3, 4, 3)
    b = init_conv(np.random.default_rng(9), 3, 4, 3)
    assert np.array_equal(a.kernel.data, b.kernel.data)
    s = np.sqrt(1 / 27)
    assert np.all(np.abs(a.kernel.data) <= s) and np.all(np.abs(a.bias.data) <= s)
