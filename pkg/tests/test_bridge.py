import numpy as np
import pytest

from bridgespot import autodiff as ad
from bridgespot.autodiff import DimensionError, Tensor
from bridgespot.bridge import (CapacityError, BridgeConfig, BridgeState, bridge_forward,
                               bridge_parameter_count, positional_encoding)


def _pair(rng, n=4, seq=24, d=32, c=32, h=8, w=24):
    return Tensor(rng.normal(size=(n, seq, d))), Tensor(rng.normal(size=(n, c, h, w)))


def test_zero_init_bridge_is_exact_identity():
    rng = np.random.default_rng(0)
    b = BridgeState(BridgeConfig(), rng)
    f_i, c_f = _pair(rng)
    assert np.abs(b(f_i, c_f).data - f_i.data).max() == 0.0


def test_gaussian_init_bridge_is_not_identity():
    rng = np.random.default_rng(0)
    b = BridgeState(BridgeConfig(init_mode="gaussian"), rng)
    f_i, c_f = _pair(rng)
    assert np.abs(b(f_i, c_f).data - f_i.data).max() > 0


def test_outer_zero_layer_gets_gradient_at_construction():
    rng = np.random.default_rng(1)
    b = BridgeState(BridgeConfig(), rng)
    f_i, c_f = _pair(rng, n=2)
    ad.tsum(b(f_i, c_f)).backward()
    assert np.linalg.norm(b.z_linear.weight.grad) > 0
    np.testing.assert_array_equal(b.z_linear.bias.grad, np.full(32, 2 * 24.0))
    # the inner conv sits behind W_zl = 0, so the chain rule zeroes it on step 0
    assert not np.any(b.z_conv.weight.grad)
    assert not np.any(b.z_conv.bias.grad)


def test_zero_conv_local_gradient_is_input_correlation():
    rng = np.random.default_rng(5)
    b = BridgeState(BridgeConfig(), rng)
    c_f = rng.normal(size=(2, 32, 8, 24))
    ad.tsum(b.z_conv(Tensor(c_f))).backward()
    np.testing.assert_array_equal(b.z_conv.bias.grad, np.full(16, 2 * 8 * 24.0))
    expected = np.broadcast_to(c_f.sum(axis=(0, 2, 3)), (16, 32))
    np.testing.assert_allclose(b.z_conv.weight.grad[:, :, 0, 0], expected, rtol=1e-12)


def test_inner_gradient_alive_once_outer_layer_moves():
    rng = np.random.default_rng(2)
    b = BridgeState(BridgeConfig(), rng)
    b.z_linear.weight.data = rng.normal(scale=0.1, size=b.z_linear.weight.shape)
    f_i, c_f = _pair(rng, n=2)
    ad.tsum(b(f_i, c_f)).backward()
    assert np.linalg.norm(b.z_conv.weight.grad) > 0


def test_unbatched_and_batched_agree():
    rng = np.random.default_rng(3)
    b = BridgeState(BridgeConfig(init_mode="gaussian"), rng)
    f_i, c_f = _pair(rng, n=2)
    one = b(Tensor(f_i.data[1]), Tensor(c_f.data[1])).data
    np.testing.assert_allclose(one, b(f_i, c_f).data[1], atol=1e-12)


def test_shape_errors_name_the_stage():
    rng = np.random.default_rng(4)
    b = BridgeState(BridgeConfig(), rng)
    f_i, c_f = _pair(rng, c=8)
    with pytest.raises(DimensionError, match="z_conv"):
        b(f_i, c_f)
    with pytest.raises(DimensionError):
        bridge_forward(b, Tensor(np.zeros((24, 32))), c_f)


def test_capacity_error_for_oversized_feature_crop():
    b = BridgeState(BridgeConfig(), np.random.default_rng(0))
    with pytest.raises(CapacityError):
        b(Tensor(np.zeros((24, 32))), Tensor(np.zeros((32, 40, 40))))


def test_positional_encoding_rows_are_distinct_and_bounded():
    pe = positional_encoding(192, 16)
    assert pe.shape == (192, 16)
    assert np.abs(pe).max() <= 1.0
    d = np.linalg.norm(pe[:, None] - pe[None], axis=-1)
    assert d[~np.eye(192, dtype=bool)].min() > 1e-3


@pytest.mark.parametrize("depth", [0, 1, 3, 6])
def test_parameter_count_closed_form(depth):
    cfg = BridgeConfig(depth=depth)
    assert BridgeState(cfg, np.random.default_rng(0)).store.count() == \
        bridge_parameter_count(cfg)
