"""Layers with hand-written backward passes.

Every layer exposes ``forward(x) -> (y, cache)`` and
``backward(dy, cache, need_dx, need_grads) -> (dx, grads)``. Convolutions use
NCHW layout, 3x3 kernels by default, unit stride and "same" padding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from ..numeric import DTYPE, Rng


class Layer:
    params: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache, need_dx=True, need_grads=True):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: Rng | None = None, std: float | None = None):
        super().__init__()
        if std is None:
            std = np.sqrt(2.0 / n_in)
        w = rng.normal(0.0, std, (n_in, n_out)) if rng is not None else np.zeros((n_in, n_out))
        self.params = {"w": np.asarray(w, dtype=DTYPE), "b": np.zeros(n_out, dtype=DTYPE)}

    def forward(self, x):
        if x.shape[1] != self.params["w"].shape[0]:
            raise DimensionError(f"dense layer expects {self.params['w'].shape[0]} inputs, got {x.shape[1]}")
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, dy, x, need_dx=True, need_grads=True):
        grads = {"w": x.T @ dy, "b": dy.sum(axis=0)} if need_grads else {}
        dx = dy @ self.params["w"].T if need_dx else None
        return dx, grads


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, mask, need_dx=True, need_grads=True):
        return (dy * mask if need_dx else None), {}


class Flatten(Layer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape, need_dx=True, need_grads=True):
        return (dy.reshape(shape) if need_dx else None), {}


class Conv2d(Layer):
    """3x3 (or ``k``x``k``) convolution, stride 1, zero padding ``k // 2``."""

    def __init__(self, c_in: int, c_out: int, rng: Rng | None = None, k: int = 3):
        super().__init__()
        if k % 2 != 1:
            raise DimensionError(f"kernel size must be odd, got {k}")
        self.k = k
        fan_in = c_in * k * k
        shape = (c_out, c_in, k, k)
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape) if rng is not None else np.zeros(shape)
        self.params = {"w": np.asarray(w, dtype=DTYPE), "b": np.zeros(c_out, dtype=DTYPE)}

    def _cols(self, x):
        pad = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (self.k, self.k), axis=(2, 3))  # N,C,H,W,k,k
        n, c, h, w = x.shape
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * self.k * self.k)

    def forward(self, x):
        w = self.params["w"]
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise DimensionError(f"conv expects (N, {w.shape[1]}, H, W), got {x.shape}")
        n, _, h, wd = x.shape
        cols = self._cols(x)
        out = cols @ w.reshape(w.shape[0], -1).T + self.params["b"]
        return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, dy, cache, need_dx=True, need_grads=True):
        shape, cols = cache
        w = self.params["w"]
        c_out = w.shape[0]
        dflat = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
        grads = {}
        if need_grads:
            grads = {"w": (dflat.T @ cols).reshape(w.shape), "b": dflat.sum(axis=0)}
        dx = None
        if need_dx:
            n, c, h, wd = shape
            k, pad = self.k, self.k // 2
            dcols = (dflat @ w.reshape(c_out, -1)).reshape(n, h, wd, c, k, k)
            dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=DTYPE)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, pad : pad + h, pad : pad + wd]
        return dx, grads


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def forward(self, x):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        xc = x[:, :, : 2 * h2, : 2 * w2]
        blocks = xc.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out, (x.shape, idx)

    def backward(self, dy, cache, need_dx=True, need_grads=True):
        if not need_dx:
            return None, {}
        shape, idx = cache
        n, c, h, w = shape
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((n, c, h2, w2, 4), dtype=DTYPE)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(shape, dtype=DTYPE)
        dx[:, :, : 2 * h2, : 2 * w2] = (
            blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        )
        return dx, {}


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], n_classes), dtype=DTYPE)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed softmax cross-entropy and its gradient w.r.t. the logits.

    ``targets`` is either an integer class vector or a soft-label matrix.
    """
    if targets.ndim == 1:
        targets = one_hot(targets.astype(np.int64), logits.shape[1])
    logp = log_softmax(logits)
    loss = float(-(targets * logp).sum())
    return loss, np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets
