"""Layers with explicit forward and backward passes.

Each layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``.
Everything is float64.
"""

import numpy as np

from .. import kernels
from ..errors import ContractError

EPS = 1e-7


def sigmoid(z):
    # tanh form avoids overflow warnings for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def bce_loss(p, y, eps=EPS):
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.size == 0:
        raise ContractError("bce_loss of an empty batch")
    if p.shape != y.shape:
        raise ContractError(f"bce_loss length mismatch: {p.size} probabilities, {y.size} labels")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def bce_logit_grad(p, y):
    """Gradient of the mean BCE with respect to the pre-sigmoid logits."""
    p = np.asarray(p, dtype=np.float64).ravel()
    return ((p - np.asarray(y, dtype=np.float64).ravel()) / p.size)[:, None]


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Dense(Layer):
    def __init__(self, n_in, n_out, rng):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.params["W"] = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.params["b"] = rng.uniform(-bound, bound, size=n_out)
        # input gradient is only formed for the leading ``grad_cols`` columns
        self.grad_cols = n_in

    def forward(self, x, training=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"][: self.grad_cols].T


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Sigmoid(Layer):
    def forward(self, x, training=False):
        self._out = sigmoid(x)
        return self._out

    def backward(self, dout):
        return dout * self._out * (1.0 - self._out)


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, rate, rng):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x, training=False):
        if not training or self.rate <= 0:
            self._scale = None
            return x
        keep = 1.0 - self.rate
        # float32 draws are plenty for a Bernoulli mask and twice as fast
        self._scale = (self.rng.random(x.shape, dtype=np.float32) < keep) * (1.0 / keep)
        return x * self._scale

    def backward(self, dout):
        return dout if self._scale is None else dout * self._scale


class Embedding(Layer):
    """Lookup table; row 0 stands for levels unseen at fit time."""

    def __init__(self, cardinality, dim, rng, scale=0.05):
        super().__init__()
        if dim < 1 or cardinality < 1:
            raise ContractError("embedding needs cardinality >= 1 and dimension >= 1")
        self.params["W"] = rng.normal(0.0, scale, size=(cardinality, dim))

    @property
    def cardinality(self):
        return self.params["W"].shape[0]

    def forward(self, codes, training=False):
        self._codes = np.asarray(codes, dtype=np.int64)
        return self.params["W"][self._codes]

    def backward(self, dout):
        self.grads["W"] = kernels.embedding_backward(self.cardinality, self._codes, dout)
        return None


def causal_taps(out_positions, kernel_size, dilation):
    """Tap map for a causal dilated convolution evaluated at ``out_positions``.

    Returns ``(in_positions, taps)``: the sorted input positions required, and
    an (S_out, K) array whose entry ``[s, j]`` indexes ``in_positions`` for
    input position ``out_positions[s] - (K - 1 - j) * dilation`` (-1 when that
    position is before the sequence start and so reads the zero padding).
    """
    out_positions = np.asarray(out_positions, dtype=np.int64)
    offsets = (kernel_size - 1 - np.arange(kernel_size)) * dilation
    wanted = out_positions[:, None] - offsets[None, :]
    in_positions = np.unique(wanted[wanted >= 0])
    taps = np.where(wanted >= 0, np.searchsorted(in_positions, np.maximum(wanted, 0)), -1)
    return in_positions, taps.astype(np.int64)


class CausalConv1d(Layer):
    """Dilated causal convolution over (n, steps, channels) inputs."""

    def __init__(self, c_in, c_out, kernel_size, dilation, rng):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel_size, self.dilation = kernel_size, dilation
        bound = 1.0 / np.sqrt(c_in * kernel_size)
        self.params["W"] = rng.uniform(-bound, bound, size=(kernel_size * c_in, c_out))
        self.params["b"] = rng.uniform(-bound, bound, size=c_out)

    def forward(self, x, taps, training=False):
        """``x`` holds the input positions the tap map indexes; output is (n, S_out, c_out)."""
        n, s_in, _ = x.shape
        self._taps, self._s_in = taps, s_in
        cols = kernels.im2col(x, taps)
        self._cols = cols.reshape(-1, cols.shape[2])
        out = self._cols @ self.params["W"] + self.params["b"]
        return out.reshape(n, taps.shape[0], self.c_out)

    def backward(self, dout):
        n = dout.shape[0]
        d2 = dout.reshape(-1, self.c_out)
        self.grads["W"] = self._cols.T @ d2
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ self.params["W"].T).reshape(n, self._taps.shape[0], -1)
        return kernels.col2im(dcols, self._taps, self._s_in)
