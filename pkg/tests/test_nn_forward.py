import numpy as np
import pytest

from volcnn import nn
from volcnn.errors import DegenerateBatchError, InvalidParameterError, ShapeError
from volcnn.tensor import RngStream

from oracles import adam_scalar_reference, conv2d_reference, max_rel_err


class TestConv2d:
    def test_identity_scale_kernel(self):
        layer = nn.Conv2d(1, 1, kernel=(1, 1))
        layer.weights[:] = 2.0
        x = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = layer.forward(x)
        np.testing.assert_allclose(y, 2.0)

    def test_same_padding_shape_512(self):
        layer = nn.Conv2d(3, 16)
        x = np.zeros((1, 3, 512, 512), dtype=np.float32)
        assert layer.forward(x).shape == (1, 16, 512, 512)

    def test_matches_bruteforce_oracle(self):
        rng = RngStream(100)
        layer = nn.Conv2d(2, 3)
        layer.init_params(rng.fork("w"))
        layer.bias = rng.gaussian(3).astype(np.float32)
        x = rng.gaussian(1 * 2 * 5 * 5).reshape(1, 2, 5, 5).astype(np.float32)
        got = layer.forward(x)
        want = conv2d_reference(x, layer.weights, layer.bias)
        assert max_rel_err(got, want) < 1e-5

    def test_channel_mismatch(self):
        layer = nn.Conv2d(2, 3)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 4, 5, 5), dtype=np.float32))

    def test_forward_deterministic(self):
        layer = nn.Conv2d(2, 4)
        layer.init_params(RngStream(3))
        x = RngStream(4).gaussian(2 * 2 * 6 * 6).reshape(2, 2, 6, 6).astype(np.float32)
        np.testing.assert_array_equal(layer.forward(x), layer.forward(x))

    def test_backward_zero_cotangent(self):
        layer = nn.Conv2d(2, 3)
        layer.init_params(RngStream(5))
        x = RngStream(6).gaussian(36 * 2).reshape(1, 2, 6, 6).astype(np.float32)
        gx, gw, gb = layer.backward(x, np.zeros((1, 3, 6, 6), dtype=np.float32))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_grad_bias_is_channel_sum(self):
        layer = nn.Conv2d(2, 3, dtype=np.float64)
        layer.init_params(RngStream(7))
        x = RngStream(8).gaussian(2 * 2 * 4 * 4).reshape(2, 2, 4, 4)
        gy = RngStream(9).gaussian(2 * 3 * 4 * 4).reshape(2, 3, 4, 4)
        _, _, gb = layer.backward(x, gy)
        np.testing.assert_allclose(gb, gy.sum(axis=(0, 2, 3)), rtol=1e-12)


class TestBatchNorm2d:
    def test_infer_identity_normalization(self):
        layer = nn.BatchNorm2d(3)
        x = RngStream(1).gaussian(2 * 3 * 4 * 4).reshape(2, 3, 4, 4).astype(np.float32)
        y = layer.forward(x, mode="infer")
        np.testing.assert_allclose(y, x / np.sqrt(1.0 + layer.epsilon), rtol=1e-6)
        assert np.max(np.abs(y - x)) < 0.02 * np.max(np.abs(x)) + 1e-3

    def test_train_normalizes_batch(self):
        layer = nn.BatchNorm2d(5)
        x = (3.0 * RngStream(2).gaussian(8 * 5 * 6 * 6)).reshape(8, 5, 6, 6).astype(np.float32)
        y, _ = layer.forward(x, mode="train")
        mean = y.mean(axis=(0, 2, 3))
        var = y.var(axis=(0, 2, 3))
        assert np.max(np.abs(mean)) < 1e-5
        assert np.max(np.abs(var - 1.0)) < 1e-3

    def test_affine_applies_after_normalization(self):
        layer = nn.BatchNorm2d(2)
        layer.gamma[:] = 2.0
        layer.beta[:] = 3.0
        x = (3.0 * RngStream(3).gaussian(4 * 2 * 4 * 4)).reshape(4, 2, 4, 4).astype(np.float32)
        y, _ = layer.forward(x, mode="train")
        ref = nn.BatchNorm2d(2)
        xhat, _ = ref.forward(x, mode="train")
        np.testing.assert_allclose(y, 2.0 * xhat + 3.0, rtol=1e-5, atol=1e-5)

    def test_batch_of_one_rejected(self):
        layer = nn.BatchNorm2d(2)
        with pytest.raises(DegenerateBatchError):
            layer.forward(np.zeros((1, 2, 4, 4), dtype=np.float32), mode="train")

    def test_running_stats_move_toward_batch(self):
        layer = nn.BatchNorm2d(1)
        x = np.full((4, 1, 2, 2), 10.0, dtype=np.float32)
        layer.forward(x, mode="train")
        assert layer.running_mean[0] == pytest.approx(0.99 * 0.0 + 0.01 * 10.0)

    def test_backward_zero_cotangent(self):
        layer = nn.BatchNorm2d(3)
        x = RngStream(4).gaussian(4 * 3 * 4 * 4).reshape(4, 3, 4, 4).astype(np.float32)
        _, cache = layer.forward(x, mode="train")
        gx, gg, gb = layer.backward(cache, np.zeros((4, 3, 4, 4), dtype=np.float32))
        assert not gx.any() and not gg.any() and not gb.any()

    def test_grad_beta_is_channel_sum(self):
        layer = nn.BatchNorm2d(3, dtype=np.float64)
        x = RngStream(5).gaussian(4 * 3 * 4 * 4).reshape(4, 3, 4, 4)
        _, cache = layer.forward(x, mode="train")
        gy = RngStream(6).gaussian(x.size).reshape(x.shape)
        _, _, gb = layer.backward(cache, gy)
        np.testing.assert_allclose(gb, gy.sum(axis=(0, 2, 3)), rtol=1e-12)


class TestStatelessOps:
    def test_relu(self):
        np.testing.assert_array_equal(
            nn.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_max_pool_ramp(self):
        # hand evaluation of 2x2/2 max over [[1..4],[5..8],[9..12],[13..16]]
        x = np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4)
        y = nn.max_pool(x)
        np.testing.assert_array_equal(y[0, 0], [[6, 8], [14, 16]])

    def test_max_pool_halves_dims(self):
        x = np.zeros((2, 3, 8, 6), dtype=np.float32)
        assert nn.max_pool(x).shape == (2, 3, 4, 3)

    def test_max_pool_odd_dim_rejected(self):
        with pytest.raises(ShapeError):
            nn.max_pool(np.zeros((1, 1, 5, 4), dtype=np.float32))

    def test_max_pool_backward_routes_to_argmax(self):
        x = np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4)
        gy = np.ones((1, 1, 2, 2), dtype=np.float32)
        gx = nn.max_pool_backward(x, gy)
        want = np.zeros((4, 4), dtype=np.float32)
        want[1, 1] = want[1, 3] = want[3, 1] = want[3, 3] = 1.0
        np.testing.assert_array_equal(gx[0, 0], want)

    def test_global_avg_pool_shape_and_constant(self):
        x = np.full((1, 512, 4, 4), 0.25, dtype=np.float32)
        y = nn.global_avg_pool(x)
        assert y.shape == (1, 512)
        np.testing.assert_allclose(y, 0.25)

    def test_sigmoid_zero(self):
        assert nn.sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)

    def test_sigmoid_range_extremes(self):
        y = nn.sigmoid(np.array([-100.0, 100.0]))
        assert 0.0 <= y[0] < 1e-6 and 1.0 - 1e-6 < y[1] <= 1.0


class TestDense:
    def test_identity(self):
        layer = nn.Dense(3, 3)
        layer.weights[:] = np.eye(3, dtype=np.float32)
        x = RngStream(1).gaussian(6).reshape(2, 3).astype(np.float32)
        np.testing.assert_allclose(layer.forward(x), x, rtol=1e-6)

    def test_feature_mismatch(self):
        with pytest.raises(ShapeError):
            nn.Dense(3, 2).forward(np.zeros((1, 4), dtype=np.float32))


class TestDropout:
    def test_train_mode_zero_fraction_and_mean(self):
        layer = nn.Dropout(0.5)
        rng = RngStream(12)
        x = (0.5 + RngStream(13).uniform(100_000)).astype(np.float32).reshape(-1)
        y, mask = layer.forward(x, mode="train", rng=rng)
        zeroed = float(np.mean(y == 0))
        assert 0.49 <= zeroed <= 0.51
        assert abs(y.mean() - x.mean()) <= 0.02 * x.mean()
        assert mask is not None

    def test_infer_is_identity(self):
        layer = nn.Dropout(0.5)
        x = np.arange(8, dtype=np.float32)
        y, mask = layer.forward(x, mode="infer")
        np.testing.assert_array_equal(y, x)
        assert mask is None

    def test_fixed_seed_reproducible(self):
        layer = nn.Dropout(0.3)
        x = np.ones(1000, dtype=np.float32)
        y1, _ = layer.forward(x, mode="train", rng=RngStream(77))
        y2, _ = layer.forward(x, mode="train", rng=RngStream(77))
        np.testing.assert_array_equal(y1, y2)

    def test_rate_one_rejected(self):
        with pytest.raises(InvalidParameterError):
            nn.Dropout(1.0)


class TestBceLoss:
    def test_half_prediction_gives_ln2(self):
        p = np.array([0.5, 0.5])
        for labels in ([1.0, 0.0], [0.0, 0.0], [1.0, 1.0]):
            loss, _ = nn.bce_loss(p, np.array(labels))
            assert loss == pytest.approx(np.log(2.0), rel=1e-6)

    def test_exact_prediction_near_zero(self):
        p = np.array([0.0, 1.0])
        y = np.array([0.0, 1.0])
        loss, _ = nn.bce_loss(p, y)
        assert loss <= 1e-6 * abs(np.log(1e-7))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.bce_loss(np.array([0.5]), np.array([1.0, 0.0]))


class TestAdam:
    def test_zero_gradient_fresh_state_no_move(self):
        p = np.array([1.0, -2.0], dtype=np.float32)
        opt = nn.Adam()
        opt.register([p])
        opt.step([p], [np.zeros_like(p)])
        np.testing.assert_array_equal(p, [1.0, -2.0])
        assert opt.step_count == 1

    def test_first_step_magnitude_is_lr(self):
        # closed form: step 1 with constant grad g is -lr * g / (|g| + eps)
        p = np.array([0.3, -0.7], dtype=np.float64)
        g = np.array([0.5, -0.2], dtype=np.float64)
        opt = nn.Adam(learning_rate=0.001)
        opt.register([p])
        before = p.copy()
        opt.step([p], [g])
        np.testing.assert_allclose(np.abs(p - before), 0.001, rtol=1e-6)
        np.testing.assert_allclose(np.sign(before - p), np.sign(g))

    def test_hundred_steps_on_quadratic(self):
        # oracle: independent direct simulation of the same recurrence
        want = adam_scalar_reference(1.0, lambda x: 2.0 * x, lr=0.1, steps=100)
        p = np.array([1.0], dtype=np.float64)
        opt = nn.Adam(learning_rate=0.1)
        opt.register([p])
        for _ in range(100):
            opt.step([p], [2.0 * p])
        assert p[0] == pytest.approx(want, abs=1e-12)
        assert abs(p[0]) < 0.1

    def test_shape_mismatch(self):
        p = np.zeros(3, dtype=np.float32)
        opt = nn.Adam()
        opt.register([p])
        with pytest.raises(ShapeError):
            opt.step([p], [np.zeros(4, dtype=np.float32)])
