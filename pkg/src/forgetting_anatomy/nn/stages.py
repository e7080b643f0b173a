"""Stages: the contiguous blocks of layers that probes address as units."""

from __future__ import annotations

import numpy as np

from .layers import Conv2d, Dense, Flatten, Layer, MaxPool2, ReLU


class Stage:
    """A plain sequential block."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, dy, caches, need_dx=True, need_grads=True):
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            # the first layer only needs dx if the caller wants it
            want_dx = need_dx or i > 0
            dy, g = layer.backward(dy, caches[i], need_dx=want_dx, need_grads=need_grads)
            for k, v in g.items():
                grads[f"{i}.{k}"] = v
        return dy, grads


class ResidualStage(Stage):
    """conv-relu-conv plus shortcut, relu, optional 2x2 pool.

    The shortcut is the identity when channel counts match and a 1x1
    convolution otherwise. No normalization layers.
    """

    def __init__(self, c_in: int, c_out: int, rng, k: int = 3, pool: bool = True):
        layers: list[Layer] = [Conv2d(c_in, c_out, rng, k), ReLU(), Conv2d(c_out, c_out, rng, k)]
        self.has_proj = c_in != c_out
        if self.has_proj:
            layers.append(Conv2d(c_in, c_out, rng, 1))
        self.pool = pool
        super().__init__(layers)
        self._relu = ReLU()
        self._pool = MaxPool2()

    def forward(self, x):
        conv1, relu1, conv2 = self.layers[:3]
        a, c1 = conv1.forward(x)
        b, r1 = relu1.forward(a)
        z, c2 = conv2.forward(b)
        if self.has_proj:
            s, cp = self.layers[3].forward(x)
        else:
            s, cp = x, None
        y, ro = self._relu.forward(z + s)
        pc = None
        if self.pool:
            y, pc = self._pool.forward(y)
        return y, (c1, r1, c2, cp, ro, pc)

    def backward(self, dy, caches, need_dx=True, need_grads=True):
        c1, r1, c2, cp, ro, pc = caches
        conv1, relu1, conv2 = self.layers[:3]
        grads = {}
        if self.pool:
            dy, _ = self._pool.backward(dy, pc)
        dsum, _ = self._relu.backward(dy, ro)
        db, g2 = conv2.backward(dsum, c2, need_grads=need_grads)
        da, _ = relu1.backward(db, r1)
        dx, g1 = conv1.backward(da, c1, need_dx=need_dx, need_grads=need_grads)
        for k, v in g1.items():
            grads[f"0.{k}"] = v
        for k, v in g2.items():
            grads[f"2.{k}"] = v
        if self.has_proj:
            dxs, gp = self.layers[3].backward(dsum, cp, need_dx=need_dx, need_grads=need_grads)
            for k, v in gp.items():
                grads[f"3.{k}"] = v
        else:
            dxs = dsum
        if need_dx:
            dx = dx + dxs
        return dx, grads


def mlp_stage(n_in: int, n_out: int, rng) -> Stage:
    return Stage([Dense(n_in, n_out, rng), ReLU()])


def conv_stage(c_in: int, c_out: int, rng, k: int = 3, pool: bool = True) -> Stage:
    layers: list[Layer] = [Conv2d(c_in, c_out, rng, k), ReLU(), Conv2d(c_out, c_out, rng, k), ReLU()]
    if pool:
        layers.append(MaxPool2())
    return Stage(layers)


def fc_stage(n_in: int, n_out: int, rng) -> Stage:
    """Fully connected stage placed after convolutional stages."""
    return Stage([Flatten(), Dense(n_in, n_out, rng), ReLU()])
