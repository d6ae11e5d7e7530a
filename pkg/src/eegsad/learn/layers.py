"""NumPy layers with explicit backward passes. Tensors are channels-last
(N, H, W, C)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}  # non-trainable buffers (batchnorm running stats)

    def forward(self, x: np.ndarray, train: bool = False, dropout: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def describe(self) -> dict:
        return {"kind": self.kind}


class Conv2D(Layer):
    """3x3 (or any odd k) convolution, stride 1, zero 'same' padding."""

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, k: int = 3, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        super().__init__()
        if k % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        self.k, self.in_ch, self.out_ch = k, in_ch, out_ch
        fan_in = k * k * in_ch
        limit = np.sqrt(6.0 / fan_in)
        rng = rng or np.random.default_rng(0)
        self.params["w"] = rng.uniform(-limit, limit, size=(k, k, in_ch, out_ch)).astype(dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)

    def _cols(self, x: np.ndarray, ch: int) -> np.ndarray:
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (self.k, self.k), axis=(1, 2))  # (N, H, W, C, k, k)
        n, h, w = x.shape[:3]
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, self.k * self.k * ch)

    def forward(self, x, train=False, dropout=False, rng=None):
        n, h, w, _ = x.shape
        cols = self._cols(x, self.in_ch)
        self._cache = (x.shape, cols)
        out = cols @ self.params["w"].reshape(-1, self.out_ch) + self.params["b"]
        return out.reshape(n, h, w, self.out_ch)

    def backward(self, dout):
        shape, cols = self._cache
        d2 = dout.reshape(-1, self.out_ch)
        self.grads["w"] = (cols.T @ d2).reshape(self.params["w"].shape)
        self.grads["b"] = d2.sum(axis=0)
        if self.in_ch < self.out_ch:
            # narrow input: scatter the column gradients back (col2im)
            n, h, w, c = shape
            k, p = self.k, self.k // 2
            dcols = (d2 @ self.params["w"].reshape(-1, self.out_ch).T).reshape(n, h, w, k, k, c)
            dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dout.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
            return dxp[:, p:p + h, p:p + w, :]
        # otherwise a same-padded correlation of dout with the flipped kernel
        w_flip = self.params["w"][::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, self.in_ch)
        return (self._cols(dout, self.out_ch) @ w_flip).reshape(shape)

    def output_shape(self, shape):
        return shape[:-1] + (self.out_ch,)

    def describe(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch, "k": self.k}


class BatchNorm(Layer):
    """Normalizes over every axis but the last; running statistics for inference."""

    kind = "batchnorm"

    def __init__(self, n_features: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.n_features, self.momentum, self.eps = n_features, momentum, eps
        self.params["gamma"] = np.ones(n_features, dtype=dtype)
        self.params["beta"] = np.zeros(n_features, dtype=dtype)
        self.state["running_mean"] = np.zeros(n_features, dtype=dtype)
        self.state["running_var"] = np.ones(n_features, dtype=dtype)

    def forward(self, x, train=False, dropout=False, rng=None):
        flat = x.reshape(-1, x.shape[-1])
        if train:
            mean = flat.mean(axis=0)
            xc = flat - mean
            var = np.einsum("ij,ij->j", xc, xc) / flat.shape[0]
            m = self.momentum
            self.state["running_mean"] = m * self.state["running_mean"] + (1 - m) * mean
            self.state["running_var"] = m * self.state["running_var"] + (1 - m) * var
        else:
            mean, var = self.state["running_mean"], self.state["running_var"]
            xc = flat - mean
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype, copy=False)
        xhat = xc
        xhat *= inv_std
        self._cache = (xhat, inv_std, train)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(x.shape)

    def backward(self, dout):
        xhat, inv_std, train = self._cache
        d = dout.reshape(-1, dout.shape[-1])
        self.grads["gamma"] = np.einsum("ij,ij->j", d, xhat)
        self.grads["beta"] = d.sum(axis=0)
        g = self.params["gamma"] * inv_std
        if not train:
            return (d * g).reshape(dout.shape)
        m = d.shape[0]
        dx = d - (self.grads["beta"] / m)
        dx -= xhat * (self.grads["gamma"] / m)
        dx *= g
        return dx.reshape(dout.shape)

    def describe(self):
        return {"kind": self.kind, "n_features": self.n_features, "momentum": self.momentum, "eps": self.eps}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, dropout=False, rng=None):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout):
        return dout * self._mask


class MaxPool2(Layer):
    """2x2 max pooling, stride 2, trailing odd row/column dropped."""

    kind = "maxpool2"

    def forward(self, x, train=False, dropout=False, rng=None):
        hp, wp = x.shape[1] // 2, x.shape[2] // 2
        views = [x[:, a:2 * hp:2, b:2 * wp:2, :] for a in (0, 1) for b in (0, 1)]
        out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
        # first window position holding the max, as argmax would pick
        idx = np.full(out.shape, 3, dtype=np.int8)
        for k in (2, 1, 0):
            idx[views[k] == out] = k
        self._cache = (x.shape, idx)
        return out

    def backward(self, dout):
        shape, idx = self._cache
        hp, wp = shape[1] // 2, shape[2] // 2
        dx = np.zeros(shape, dtype=dout.dtype)
        for k, (a, b) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            dx[:, a:2 * hp:2, b:2 * wp:2, :] = np.where(idx == k, dout, 0)
        return dx

    def output_shape(self, shape):
        h, w, c = shape
        return (h // 2, w // 2, c)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1 / (1 - rate) during training."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, train=False, dropout=False, rng=None):
        if not dropout or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def describe(self):
        return {"kind": self.kind, "rate": self.rate}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, dropout=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        limit = np.sqrt(6.0 / n_in)
        rng = rng or np.random.default_rng(0)
        self.params["w"] = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=False, dropout=False, rng=None):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self.grads["w"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T

    def output_shape(self, shape):
        return (self.n_out,)

    def describe(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient (p - onehot) / N w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    loss = -float(log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
