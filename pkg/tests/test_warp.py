import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnet.errors import ConfigError, UsageError
from mmnet.tensor import grad_check
from mmnet.warp import bilinear_warp, bilinear_warp_backward, mv_to_feature_grid, residual_to_feature_grid, warp, warp_all
from oracles import warp_sum


# ---------------------------------------------------------------- rescaling


def test_uniform_block_motion_divides_by_stride():
    mvs = np.broadcast_to([-16.0, 0.0], (4, 4, 2))
    field = mv_to_feature_grid(mvs, (64, 64), (4, 4), stride=16)
    assert np.array_equal(field, np.broadcast_to([-1.0, 0.0], (4, 4, 2)))


def test_zero_motion_zero_field():
    assert not mv_to_feature_grid(np.zeros((4, 4, 2)), (64, 64), (4, 4)).any()


def test_cell_straddling_two_blocks_is_area_averaged():
    # 8-px imported blocks: a 16-px cell spans two blocks horizontally.
    mvs = np.zeros((2, 4, 2))
    mvs[:, 0] = (0, 4)
    mvs[:, 1] = (0, 8)
    field = mv_to_feature_grid(mvs, (16, 32), (1, 2), stride=16, block_size=8)
    assert np.allclose(field[0, 0], [0.0, 0.375], atol=1e-15)


def test_non_integer_stride_rejected():
    with pytest.raises(ConfigError):
        mv_to_feature_grid(np.zeros((4, 4, 2)), (64, 64), (5, 5))
    with pytest.raises(ConfigError):
        mv_to_feature_grid(np.zeros((4, 4, 2)), (64, 64), (4, 4), stride=8)
    with pytest.raises(ConfigError):
        residual_to_feature_grid(np.zeros((64, 64, 3)), (6, 6))


def test_residual_rescaling_examples():
    assert not residual_to_feature_grid(np.zeros((64, 64, 3)), (4, 4)).any()
    assert np.array_equal(residual_to_feature_grid(np.full((64, 64, 3), 0.5), (4, 4)), np.full((4, 4, 3), 0.5))
    checker = np.indices((2, 2)).sum(axis=0) % 2 * 2.0 - 1.0
    assert residual_to_feature_grid(np.repeat(checker[..., None], 3, axis=2), (1, 1)).tolist() == [[[0.0, 0.0, 0.0]]]


# ---------------------------------------------------------------- forward warp


def test_zero_motion_identity():
    x = np.random.default_rng(0).standard_normal((5, 7, 3))
    assert np.array_equal(bilinear_warp(x, np.zeros((5, 7, 2))), x)


@pytest.mark.parametrize("dx,expected", [(-1.0, [0, 1, 2, 3]), (-0.5, [0.5, 1.5, 2.5, 3.5])])
def test_row_examples(dx, expected):
    row = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1)
    motion = np.zeros((1, 4, 2))
    motion[..., 1] = dx
    out = bilinear_warp(row, motion)[0, :, 0]
    assert np.allclose(out, expected, atol=1e-15)
    assert np.allclose(warp_sum(row, motion)[0, :, 0], expected, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_matches_literal_sum(seed):
    rng = np.random.default_rng(seed)
    feat = rng.standard_normal((8, 8, 4))
    motion = rng.uniform(-3, 3, (8, 8, 2))
    assert np.max(np.abs(bilinear_warp(feat, motion) - warp_sum(feat, motion))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 6, 6, 3))
    m = rng.uniform(-3, 3, (6, 6, 2))
    lhs = bilinear_warp(a * x + b * y, m)
    rhs = a * bilinear_warp(x, m) + b * bilinear_warp(y, m)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@pytest.mark.parametrize("shift", [(1, 0), (0, -2), (2, 2), (-1, 1)])
def test_integer_shift_preserves_mass(shift):
    feat = np.zeros((10, 10, 2))
    feat[3:7, 3:7] = np.random.default_rng(1).random((4, 4, 2))
    out = bilinear_warp(feat, np.broadcast_to(np.array(shift, float), (10, 10, 2)))
    assert np.allclose(out.sum(axis=(0, 1)), feat.sum(axis=(0, 1)), atol=1e-12)


def test_batched_warp_and_broadcast_motion():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 5, 5, 2))
    m = rng.uniform(-2, 2, (5, 5, 2))
    out = bilinear_warp(x, m)
    for k in range(3):
        assert np.allclose(out[k], bilinear_warp(x[k], m), atol=1e-14)


def test_dim_mismatch_is_usage_error():
    with pytest.raises(UsageError):
        bilinear_warp(np.zeros((4, 4, 2)), np.zeros((3, 4, 2)))
    with pytest.raises(UsageError):
        bilinear_warp_backward(np.zeros((4, 4, 2)), np.zeros((4, 4, 3)))


# ---------------------------------------------------------------- adjoint


def test_backward_zero_motion_identity():
    g = np.random.default_rng(3).standard_normal((4, 5, 2))
    assert np.array_equal(bilinear_warp_backward(g, np.zeros((4, 5, 2))), g)


def test_backward_integer_shift_moves_opposite():
    g = np.zeros((5, 5, 1))
    g[2, 2] = 1.0
    motion = np.broadcast_to([1.0, -1.0], (5, 5, 2))
    back = bilinear_warp_backward(g, motion)
    assert back[3, 1, 0] == 1.0 and back.sum() == 1.0
    # the forward pulls from p + m, so a gradient at p lands on p + m
    edge = np.zeros((5, 5, 1))
    edge[4, 0] = 1.0
    assert not bilinear_warp_backward(edge, motion).any()


@pytest.mark.parametrize("seed", range(100))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 7, 3))
    y = rng.standard_normal((6, 7, 3))
    m = rng.uniform(-3, 3, (6, 7, 2))
    lhs = np.sum(bilinear_warp(x, m) * y)
    rhs = np.sum(x * bilinear_warp_backward(y, m))
    assert abs(lhs - rhs) <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_warp_grad_check(seed):
    rng = np.random.default_rng(seed)
    # keep sample points away from integer kinks where the tent is not differentiable in motion;
    # the gradient is taken w.r.t. features only, which is linear
    m = rng.uniform(-2, 2, (5, 5, 2))
    assert grad_check(lambda f: warp(f, m), [rng.standard_normal((5, 5, 3))], seed=seed) <= 1e-8


def test_warp_all_matches_individual():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 4, 4, 3))
    m = rng.uniform(-1, 1, (4, 4, 2))
    wa, wb = warp_all([a, b], m)
    assert np.array_equal(wa.data, bilinear_warp(a, m)) and np.array_equal(wb.data, bilinear_warp(b, m))
