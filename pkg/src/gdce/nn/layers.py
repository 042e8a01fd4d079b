"""The operator set: conv3x3, pooling, dense, activations.

Every layer follows the same two-method protocol: forward(x) caches whatever
the backward pass needs, backward(grad, param_grads) consumes the cache and
returns the gradient with respect to the input. Convolution is stride-1 with
zero padding 1 (spatial size preserved) and is lowered to a single matmul via
im2col; its backward scatters back with the transposed shifts.

Weights are fan-in-scaled uniform, bound sqrt(6 / fan_in), drawn from the rng
handed to the constructor so a recorded seed reproduces the init bit-exactly.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError


class Param:
    """A trainable array plus its gradient slot."""

    def __init__(self, data: np.ndarray, name: str):
        self.data = data
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, param_grads: bool = True) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


def _im2col3(x: np.ndarray) -> np.ndarray:
    # (B, C, H, W) -> (B, C*9, H*W); nine shifted views of the padded input
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[:, :, k] = xp[:, :, di : di + h, dj : dj + w]
            k += 1
    return cols.reshape(b, c * 9, h * w)


def _col2im3(gcols: np.ndarray, shape) -> np.ndarray:
    # transpose of _im2col3: accumulate the nine shifts into the padded grid
    b, c, h, w = shape
    g = gcols.reshape(b, c, 9, h, w)
    gxp = np.zeros((b, c, h + 2, w + 2), dtype=gcols.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            gxp[:, :, di : di + h, dj : dj + w] += g[:, :, k]
            k += 1
    return gxp[:, :, 1 : h + 1, 1 : w + 1]


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * 9
        if rng is None:
            w = np.zeros((out_channels, in_channels * 9), dtype=dtype)
        else:
            w = _uniform_init(rng, (out_channels, in_channels * 9), fan_in, dtype)
        self.weight = Param(w, "weight")
        self.bias = Param(np.zeros(out_channels, dtype=dtype), "bias")
        self._cache = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"conv3x3 expects (B, {self.in_channels}, H, W), got {x.shape}"
            )
        b, _, h, w = x.shape
        cols = _im2col3(x)
        out = np.matmul(self.weight.data, cols)  # (B, out, H*W)
        out += self.bias.data[:, None]
        self._cache = (cols, x.shape)
        return out.reshape(b, self.out_channels, h, w)

    def backward(self, grad, param_grads=True):
        cols, x_shape = self._cache
        self._cache = None
        b, _, h, w = x_shape
        g = grad.reshape(b, self.out_channels, h * w)
        if param_grads:
            self.weight.grad = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
            self.bias.grad = g.sum(axis=(0, 2))
        gcols = np.matmul(self.weight.data.T, g)
        return _col2im3(gcols, x_shape)

    def spec(self):
        return {"kind": "conv3x3", "in_channels": self.in_channels,
                "out_channels": self.out_channels}


class AvgPool2x2(Layer):
    """Non-overlapping 2x2 mean pooling; spatial dims must be even."""

    def __init__(self):
        self._in_shape = None

    def forward(self, x):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"avgpool2x2 needs even spatial dims, got {h}x{w}")
        self._in_shape = x.shape
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, grad, param_grads=True):
        shape = self._in_shape
        self._in_shape = None
        g = np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3)
        return (g * np.asarray(0.25, dtype=grad.dtype)).reshape(shape)

    def spec(self):
        return {"kind": "avgpool2x2"}


class AdaptiveAvgPool(Layer):
    """Average pooling onto a fixed output grid, whatever the input size."""

    def __init__(self, out_size: int = 4):
        self.out_size = out_size
        self._cache = None

    def _bins(self, n: int):
        s = self.out_size
        return [(i * n // s, -((-(i + 1) * n) // s)) for i in range(s)]

    def forward(self, x):
        b, c, h, w = x.shape
        s = self.out_size
        rows, cols = self._bins(h), self._bins(w)
        out = np.empty((b, c, s, s), dtype=x.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                out[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
        self._cache = (x.shape, rows, cols)
        return out

    def backward(self, grad, param_grads=True):
        shape, rows, cols = self._cache
        self._cache = None
        gx = np.zeros(shape, dtype=grad.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += grad[:, :, i : i + 1, j : j + 1] / area
        return gx

    def spec(self):
        return {"kind": "adaptive_avgpool", "out_size": self.out_size}


class Flatten(Layer):
    def __init__(self):
        self._in_shape = None

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, param_grads=True):
        shape = self._in_shape
        self._in_shape = None
        return grad.reshape(shape)

    def spec(self):
        return {"kind": "flatten"}


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None, dtype=np.float32,
                 init_scale: float = 1.0):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            w = np.zeros((in_features, out_features), dtype=dtype)
        else:
            w = _uniform_init(rng, (in_features, out_features), in_features, dtype)
            if init_scale != 1.0:
                w *= np.asarray(init_scale, dtype=dtype)
        self.weight = Param(w, "weight")
        self.bias = Param(np.zeros(out_features, dtype=dtype), "bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(
                f"dense expects (B, {self.in_features}), got {x.shape}"
            )
        self._x = x
        return x @ self.weight.data + self.bias.data

    def backward(self, grad, param_grads=True):
        x = self._x
        self._x = None
        if param_grads:
            self.weight.grad = x.T @ grad
            self.bias.grad = grad.sum(axis=0)
        return grad @ self.weight.data.T

    def spec(self):
        return {"kind": "dense", "in_features": self.in_features,
                "out_features": self.out_features}


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.01):
        self.slope = slope
        self._mask = None

    def forward(self, x):
        self._mask = x >= 0
        return np.where(self._mask, x, np.asarray(self.slope, dtype=x.dtype) * x)

    def backward(self, grad, param_grads=True):
        mask = self._mask
        self._mask = None
        return np.where(mask, grad, np.asarray(self.slope, dtype=grad.dtype) * grad)

    def spec(self):
        return {"kind": "leaky_relu", "slope": self.slope}


class Tanh(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad, param_grads=True):
        y = self._y
        self._y = None
        return grad * (1.0 - y * y)

    def spec(self):
        return {"kind": "tanh"}


_LAYER_KINDS = {
    "conv3x3": lambda d, dt: Conv3x3(d["in_channels"], d["out_channels"], dtype=dt),
    "avgpool2x2": lambda d, dt: AvgPool2x2(),
    "adaptive_avgpool": lambda d, dt: AdaptiveAvgPool(d["out_size"]),
    "flatten": lambda d, dt: Flatten(),
    "dense": lambda d, dt: Dense(d["in_features"], d["out_features"], dtype=dt),
    "leaky_relu": lambda d, dt: LeakyReLU(d["slope"]),
    "tanh": lambda d, dt: Tanh(),
}


def layer_from_spec(d: dict, dtype=np.float32) -> Layer:
    """Rebuild a layer (zero-weighted) from its spec() dict."""
    try:
        return _LAYER_KINDS[d["kind"]](d, dtype)
    except KeyError as e:
        raise DataError(f"unknown layer kind in descriptor: {d!r}") from e
