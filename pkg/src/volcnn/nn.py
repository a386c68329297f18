"""Layers, loss and optimizer for the eruption-detector CNNs.

Every forward and backward pass is hand-derived and runs on plain numpy
arrays; there is no autodiff graph.  Public layer methods take feature maps
in the conventional (N, C, H, W) order.  The training hot path uses the
``*_nhwc`` variants, which keep maps channels-last (N, H, W, C) so the
im2col GEMMs and per-channel reductions hit contiguous memory; both views
compute identical values.

Convolution is stride (1, 1) with "same" zero padding and is evaluated as
one GEMM per image over an im2col matrix with (kh, kw, c) column order.
The gradient w.r.t. the input is assembled by scatter-adding the GEMM
output back over the nine kernel offsets (col2im).

Default hyperparameters follow the conventions of the training-framework
family this detector was prototyped with: Adam(lr=1e-3, 0.9, 0.999, 1e-8),
batchnorm momentum 0.99 / epsilon 1e-3, dropout rate 0.5 with inverted
scaling, binary cross-entropy inputs clamped to [1e-7, 1 - 1e-7].
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DegenerateBatchError,
    InvalidParameterError,
    ShapeError,
)
from .tensor import DEFAULT_DTYPE, RngStream

BCE_CLAMP = 1e-7


def _nchw_to_nhwc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _nhwc_to_nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


class Conv2d:
    """3x3-style convolution, stride (1, 1), "same" zero padding.

    weights: (out_channels, in_channels, kh, kw); bias: (out_channels,).
    """

    def __init__(self, in_channels, out_channels, kernel=(3, 3), stride=(1, 1),
                 padding="same", dtype=DEFAULT_DTYPE):
        if stride != (1, 1):
            raise InvalidParameterError("only stride (1, 1) is supported")
        if padding != "same":
            raise InvalidParameterError('only "same" padding is supported')
        kh, kw = kernel
        if kh % 2 != 1 or kw % 2 != 1:
            raise InvalidParameterError("kernel dims must be odd for same padding")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (kh, kw)
        self.stride = stride
        self.padding = padding
        self.dtype = np.dtype(dtype)
        self.weights = np.zeros((out_channels, in_channels, kh, kw), dtype=dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self._scratch = {}

    def init_params(self, rng: RngStream):
        """He-normal weights, zero bias."""
        fan_in = self.in_channels * self.kernel[0] * self.kernel[1]
        std = np.sqrt(2.0 / fan_in)
        n = self.weights.size
        self.weights = (rng.gaussian(n).reshape(self.weights.shape) * std).astype(self.dtype)
        self.bias = np.zeros(self.out_channels, dtype=self.dtype)

    # GEMM layout: (kh * kw * in, out), matching im2col column order (kh, kw, c).
    def _gemm_weights(self):
        kh, kw = self.kernel
        return np.ascontiguousarray(
            self.weights.transpose(2, 3, 1, 0).reshape(kh * kw * self.in_channels,
                                                       self.out_channels))

    def _buf(self, key, shape):
        buf = self._scratch.get(key)
        if buf is None or buf.shape != shape or buf.dtype != self.dtype:
            buf = np.empty(shape, dtype=self.dtype)
            self._scratch[key] = buf
        return buf

    def _im2col(self, xp, cols, H, W):
        kh, kw = self.kernel
        win = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # (H, W, C, kh, kw)
        np.copyto(cols.reshape(H, W, kh, kw, self.in_channels),
                  win.transpose(0, 1, 3, 4, 2))

    def forward_nhwc(self, x):
        N, H, W, C = x.shape
        if C != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {C}")
        kh, kw = self.kernel
        ph, pw = kh // 2, kw // 2
        wg = self._gemm_weights()
        y = np.empty((N, H, W, self.out_channels), dtype=self.dtype)
        xp = self._buf("xp", (H + 2 * ph, W + 2 * pw, C))
        xp.fill(0)
        cols = self._buf("cols", (H * W, kh * kw * C))
        for n in range(N):
            xp[ph:ph + H, pw:pw + W] = x[n]
            self._im2col(xp, cols, H, W)
            np.matmul(cols, wg, out=y[n].reshape(H * W, self.out_channels))
        y += self.bias
        return y

    def backward_nhwc(self, x, grad_out, need_grad_input=True):
        N, H, W, C = x.shape
        kh, kw = self.kernel
        ph, pw = kh // 2, kw // 2
        K = self.out_channels
        wg = self._gemm_weights()
        grad_w = np.zeros_like(wg)
        grad_b = grad_out.sum(axis=(0, 1, 2), dtype=np.float64).astype(self.dtype)
        grad_x = np.empty_like(x) if need_grad_input else None
        xp = self._buf("xp", (H + 2 * ph, W + 2 * pw, C))
        xp.fill(0)
        cols = self._buf("cols", (H * W, kh * kw * C))
        if need_grad_input:
            dcols = self._buf("dcols", (H * W, kh * kw * C))
            gxp = self._buf("gxp", (H + 2 * ph, W + 2 * pw, C))
        for n in range(N):
            g = grad_out[n].reshape(H * W, K)
            xp[ph:ph + H, pw:pw + W] = x[n]
            self._im2col(xp, cols, H, W)
            grad_w += cols.T @ g
            if need_grad_input:
                np.matmul(g, wg.T, out=dcols)
                d5 = dcols.reshape(H, W, kh, kw, C)
                gxp.fill(0)
                for dy in range(kh):
                    for dx in range(kw):
                        gxp[dy:dy + H, dx:dx + W] += d5[:, :, dy, dx]
                grad_x[n] = gxp[ph:ph + H, pw:pw + W]
        # back to canonical (out, in, kh, kw)
        grad_w = np.ascontiguousarray(
            grad_w.reshape(kh, kw, C, K).transpose(3, 2, 0, 1))
        return grad_x, grad_w, grad_b

    def forward(self, x):
        """Same-padded cross-correlation plus bias on (N, C, H, W) input."""
        if x.ndim != 4:
            raise ShapeError(f"expected 4-d input, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} input channels, got {x.shape[1]}")
        return _nhwc_to_nchw(self.forward_nhwc(_nchw_to_nhwc(x)))

    def backward(self, x, grad_out):
        """Gradients of forward: (grad_input, grad_weights, grad_bias)."""
        if x.shape[1] != self.in_channels or grad_out.shape[1] != self.out_channels:
            raise ShapeError("channel counts do not match layer")
        if grad_out.shape[0] != x.shape[0] or grad_out.shape[2:] != x.shape[2:]:
            raise ShapeError("grad_out spatial/batch dims do not match input")
        gx, gw, gb = self.backward_nhwc(_nchw_to_nhwc(x), _nchw_to_nhwc(grad_out))
        return _nhwc_to_nchw(gx), gw, gb


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


class BatchNorm2d:
    """Per-channel batch normalization over (N, H, W)."""

    def __init__(self, channels, momentum=0.99, epsilon=1e-3, dtype=DEFAULT_DTYPE):
        if not 0.0 < momentum < 1.0:
            raise InvalidParameterError("momentum must be in (0, 1)")
        self.channels = channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.dtype = np.dtype(dtype)
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def _check_channels(self, x):
        if x.shape[-1] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[-1]}")

    def forward_train_nhwc(self, x):
        self._check_channels(x)
        if x.shape[0] < 2:
            raise DegenerateBatchError("train-mode batchnorm needs batch size >= 2")
        cnt = x.shape[0] * x.shape[1] * x.shape[2]
        mean = x.mean(axis=(0, 1, 2))
        sq = np.einsum("nhwc,nhwc->c", x, x) / cnt
        var = np.maximum(sq - mean * mean, 0.0)
        inv = (1.0 / np.sqrt(var + self.epsilon)).astype(self.dtype)
        mean = mean.astype(self.dtype)
        a = self.gamma * inv
        b = self.beta - mean * a
        y = np.multiply(x, a, dtype=self.dtype)
        y += b
        m = self.dtype.type(self.momentum)
        self.running_mean = m * self.running_mean + (1 - m) * mean
        self.running_var = m * self.running_var + (1 - m) * var.astype(self.dtype)
        cache = (x, mean, inv)
        return y, cache

    def forward_infer_nhwc(self, x):
        self._check_channels(x)
        inv = (1.0 / np.sqrt(self.running_var + self.epsilon)).astype(self.dtype)
        a = self.gamma * inv
        b = self.beta - self.running_mean * a
        y = np.multiply(x, a, dtype=self.dtype)
        y += b
        return y

    def backward_nhwc(self, cache, grad_out):
        x, mean, inv = cache
        cnt = x.shape[0] * x.shape[1] * x.shape[2]
        grad_beta = grad_out.sum(axis=(0, 1, 2), dtype=np.float64)
        s_gx = np.einsum("nhwc,nhwc->c", grad_out, x)
        grad_gamma = ((s_gx - mean * grad_beta) * inv).astype(self.dtype)
        grad_beta = grad_beta.astype(self.dtype)
        # grad_x = A*gy + B*x + C per channel, from the batch-statistics chain rule
        A = self.gamma * inv
        B = (-A * inv * grad_gamma / cnt).astype(self.dtype)
        C = (-A * grad_beta / cnt - B * mean).astype(self.dtype)
        gx = np.multiply(grad_out, A, dtype=self.dtype)
        gx += np.multiply(x, B, dtype=self.dtype)
        gx += C
        return gx, grad_gamma, grad_beta

    def forward(self, x, mode="infer"):
        """Normalize (N, C, H, W) by batch stats (train) or running stats (infer).

        Train mode returns (y, cache) and updates running statistics;
        infer mode returns y alone.
        """
        xh = _nchw_to_nhwc(x)
        if mode == "train":
            y, cache = self.forward_train_nhwc(xh)
            return _nhwc_to_nchw(y), cache
        if mode == "infer":
            return _nhwc_to_nchw(self.forward_infer_nhwc(xh))
        raise InvalidParameterError(f"unknown mode {mode!r}")

    def backward(self, cache, grad_out):
        gx, gg, gb = self.backward_nhwc(cache, _nchw_to_nhwc(grad_out))
        return _nhwc_to_nchw(gx), gg, gb


# ---------------------------------------------------------------------------
# dense / dropout
# ---------------------------------------------------------------------------


class Dense:
    """Fully connected layer: y = x W^T + b."""

    def __init__(self, in_features, out_features, dtype=DEFAULT_DTYPE):
        self.in_features = in_features
        self.out_features = out_features
        self.dtype = np.dtype(dtype)
        self.weights = np.zeros((out_features, in_features), dtype=dtype)
        self.bias = np.zeros(out_features, dtype=dtype)

    def init_params(self, rng: RngStream):
        std = np.sqrt(2.0 / self.in_features)
        self.weights = (rng.gaussian(self.weights.size)
                        .reshape(self.weights.shape) * std).astype(self.dtype)
        self.bias = np.zeros(self.out_features, dtype=self.dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"expected (N, {self.in_features}) input, got {x.shape}")
        return x @ self.weights.T + self.bias

    def backward(self, x, grad_out):
        if grad_out.shape != (x.shape[0], self.out_features):
            raise ShapeError("grad_out shape does not match layer output")
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
        grad_x = grad_out @ self.weights
        return grad_x, grad_w, grad_b


class Dropout:
    """Inverted dropout: kept activations are scaled by 1/(1-rate)."""

    def __init__(self, rate=0.5):
        if not 0.0 <= rate < 1.0:
            raise InvalidParameterError("dropout rate must be in [0, 1)")
        self.rate = rate

    def forward(self, x, mode="infer", rng: RngStream | None = None):
        """Returns (y, mask). Infer mode is the identity with mask None."""
        if mode == "infer" or self.rate == 0.0:
            return x, None
        if mode != "train":
            raise InvalidParameterError(f"unknown mode {mode!r}")
        if rng is None:
            raise InvalidParameterError("train-mode dropout needs an RngStream")
        keep = rng.uniform(x.size).reshape(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * mask, mask

    def backward(self, mask, grad_out):
        if mask is None:
            return grad_out
        return grad_out * mask


# ---------------------------------------------------------------------------
# stateless ops
# ---------------------------------------------------------------------------


def relu(x):
    return np.maximum(x, 0)


def relu_backward(y, grad_out):
    """Backward through relu given its output y (y > 0 iff input was > 0)."""
    return grad_out * (y > 0)


def maxpool2x2_forward_nhwc(x):
    """2x2/2 max pool on (N, H, W, C); returns (y, window argmax indices)."""
    N, H, W, C = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"max_pool 2x2/2 needs even spatial dims, got {H}x{W}")
    win = np.ascontiguousarray(
        x.reshape(N, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4)
    ).reshape(N, H // 2, W // 2, C, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx.astype(np.uint8)


def maxpool2x2_backward_nhwc(idx, grad_out):
    N, Ho, Wo, C = grad_out.shape
    wg = np.zeros((N, Ho, Wo, C, 4), dtype=grad_out.dtype)
    np.put_along_axis(wg, idx[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    gx = wg.reshape(N, Ho, Wo, C, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(gx).reshape(N, Ho * 2, Wo * 2, C)


def max_pool(x, k=2, s=2):
    """2x2 stride-2 max pool on (N, C, H, W); halves H and W."""
    if (k, s) != (2, 2):
        raise InvalidParameterError("only k=2, s=2 pooling is supported")
    y, _ = maxpool2x2_forward_nhwc(_nchw_to_nhwc(x))
    return _nhwc_to_nchw(y)


def max_pool_backward(x, grad_out, k=2, s=2):
    if (k, s) != (2, 2):
        raise InvalidParameterError("only k=2, s=2 pooling is supported")
    _, idx = maxpool2x2_forward_nhwc(_nchw_to_nhwc(x))
    return _nhwc_to_nchw(maxpool2x2_backward_nhwc(idx, _nchw_to_nhwc(grad_out)))


def global_avg_pool(x):
    """Mean over each channel plane: (N, C, H, W) -> (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"expected 4-d input, got shape {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(input_shape, grad_out):
    N, C, H, W = input_shape
    if grad_out.shape != (N, C):
        raise ShapeError("grad_out shape does not match pooled output")
    g = (grad_out / (H * W)).astype(grad_out.dtype)
    return np.broadcast_to(g[:, :, None, None], input_shape).copy()


def gap_forward_nhwc(x):
    return x.mean(axis=(1, 2))


def gap_backward_nhwc(input_shape, grad_out):
    N, H, W, C = input_shape
    g = (grad_out / (H * W)).astype(grad_out.dtype)
    return np.broadcast_to(g[:, None, None, :], input_shape).copy()


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, grad_out):
    """Backward through sigmoid given its output y."""
    return grad_out * y * (1.0 - y)


def bce_loss(predictions, labels):
    """Mean binary cross-entropy and its gradient w.r.t. predictions.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs; the
    gradient is zero where the clamp was active.
    """
    if predictions.shape != labels.shape:
        raise ShapeError(
            f"predictions {predictions.shape} vs labels {labels.shape}")
    p = np.clip(predictions, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = labels
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
    interior = (predictions > BCE_CLAMP) & (predictions < 1.0 - BCE_CLAMP)
    grad = np.where(interior, (p - y) / (p * (1.0 - p)), 0.0) / predictions.size
    return loss, grad.astype(predictions.dtype)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction. One step() call = one update = step_count + 1."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = []
        self.second_moment = []

    def register(self, params):
        self.first_moment = [np.zeros_like(p) for p in params]
        self.second_moment = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Update params in place from grads (lists aligned with register())."""
        if len(params) != len(self.first_moment):
            raise ShapeError("parameter list does not match registered moments")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 / (1.0 - b1 ** t)
        c2 = 1.0 / (1.0 - b2 ** t)
        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            if p.shape != g.shape:
                raise ShapeError(f"param {p.shape} vs grad {g.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= (self.learning_rate * (m * c1) /
                  (np.sqrt(v * c2) + self.epsilon)).astype(p.dtype)
