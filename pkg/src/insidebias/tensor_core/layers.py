"""Layer set for the two stock architectures.

Each layer keeps whatever its backward pass needs from the last training
forward. Activations are batched ``(N, H, W, C)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import ops
from .tensor import Tensor


@dataclass
class Context:
    """Per-forward state: mode, dropout RNG and optional activation capture."""

    train: bool = False
    rng: np.random.Generator | None = None
    trace: list | None = None
    probes: frozenset = frozenset()

    def record(self, name: str, value: np.ndarray) -> None:
        if self.trace is not None and name in self.probes:
            self.trace.append((name, value))


def he_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 2.0, dtype=np.float32):
    bound = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = "layer"
    probe = False

    def __init__(self, name: str):
        self.name = name

    def forward(self, x: np.ndarray, ctx: Context) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray, need_dx: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def init(self, rng: np.random.Generator) -> None:
        pass

    def clear_cache(self) -> None:
        for attr in list(vars(self)):
            if attr.startswith("_c_"):
                setattr(self, attr, None)

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    """Convolution with an optional fused ReLU; a probe point when activated."""

    kind = "conv"

    def __init__(self, name, in_maps, out_maps, kernel=3, stride=1, padding=None,
                 activation="relu", dtype=np.float32):
        super().__init__(name)
        if kernel < 1:
            raise ConfigurationError(f"{name}: kernel must be >= 1")
        if activation not in ("relu", None):
            raise ConfigurationError(f"{name}: unsupported activation {activation!r}")
        self.in_maps, self.out_maps, self.kernel = in_maps, out_maps, kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.activation = activation
        self.probe = activation == "relu"
        self.weight = Tensor.zeros((out_maps, in_maps, kernel, kernel), dtype)
        self.bias = Tensor.zeros((out_maps,), dtype)
        self._c_cols = self._c_shape = self._c_out = None

    def init(self, rng):
        fan_in = self.in_maps * self.kernel * self.kernel
        gain = 2.0 if self.activation == "relu" else 1.0
        self.weight.data[...] = he_uniform(rng, self.weight.shape, fan_in, gain, self.weight.dtype)
        self.bias.data[...] = 0

    def parameters(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.in_maps:
            raise DimensionError(f"layer {self.name!r}: expects {self.in_maps} input maps, got {c}")
        oh = ops.conv_output_size(h, self.kernel, self.stride, self.padding)
        ow = ops.conv_output_size(w, self.kernel, self.stride, self.padding)
        if oh < 1 or ow < 1:
            raise DimensionError(f"layer {self.name!r}: {h}x{w} input too small")
        return (oh, ow, self.out_maps)

    def forward(self, x, ctx):
        if x.shape[-1] != self.in_maps:
            raise DimensionError(f"layer {self.name!r}: expects {self.in_maps} input maps, got {x.shape[-1]}")
        out, cols = ops.conv2d_forward(x, self.weight.data, self.bias.data, self.stride, self.padding)
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
        if ctx.train:
            self._c_cols, self._c_shape, self._c_out = cols, x.shape, out
        ctx.record(self.name, out)
        return out

    def backward(self, dout, need_dx=True):
        if self.activation == "relu":
            dout = dout * (self._c_out > 0)
        dx, dw, db = ops.conv2d_backward(dout, self._c_cols, self._c_shape, self.weight.data,
                                         self.stride, self.padding, need_dx)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def describe(self):
        return {"kind": self.kind, "name": self.name, "in": self.in_maps, "out": self.out_maps,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding,
                "activation": self.activation}


class MaxPool2D(Layer):
    kind = "pool"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise DimensionError(f"layer {self.name!r}: cannot pool a {h}x{w} map")
        return (h // 2, w // 2, c)

    def forward(self, x, ctx):
        out = ops.maxpool2x2_forward(x)
        if ctx.train:
            self._c_x, self._c_out = x, out
        return out

    def backward(self, dout, need_dx=True):
        return ops.maxpool2x2_backward(dout, self._c_x, self._c_out)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, ctx):
        if ctx.train:
            self._c_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout, need_dx=True):
        return dout.reshape(self._c_shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, in_features, out_features, activation="relu", dtype=np.float32):
        super().__init__(name)
        if activation not in ("relu", None):
            raise ConfigurationError(f"{name}: unsupported activation {activation!r}")
        self.in_features, self.out_features = in_features, out_features
        self.activation = activation
        self.weight = Tensor.zeros((in_features, out_features), dtype)
        self.bias = Tensor.zeros((out_features,), dtype)
        self._c_x = self._c_out = None

    def init(self, rng):
        gain = 2.0 if self.activation == "relu" else 1.0
        self.weight.data[...] = he_uniform(rng, self.weight.shape, self.in_features, gain, self.weight.dtype)
        self.bias.data[...] = 0

    def parameters(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise DimensionError(f"layer {self.name!r}: expects {self.in_features} features, got {in_shape}")
        return (self.out_features,)

    def forward(self, x, ctx):
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"layer {self.name!r}: expects {self.in_features} features, got {x.shape[-1]}")
        out = x @ self.weight.data
        out += self.bias.data
        if self.activation == "relu":
            np.maximum(out, 0, out=out)
            ctx.record(self.name, out)
        if ctx.train:
            self._c_x, self._c_out = x, out
        return out

    def backward(self, dout, need_dx=True):
        if self.activation == "relu":
            dout = dout * (self._c_out > 0)
        self.weight.grad += self._c_x.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.data.T if need_dx else None

    def describe(self):
        return {"kind": self.kind, "name": self.name, "in": self.in_features,
                "out": self.out_features, "activation": self.activation}


class Dropout(Layer):
    """Inverted dropout: scaled at train time, identity at eval time."""

    kind = "dropout"

    def __init__(self, name, rate=0.5):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ConfigurationError(f"{name}: dropout rate must lie in [0, 1)")
        self.rate = rate
        self._c_mask = None

    def forward(self, x, ctx):
        if not ctx.train or self.rate == 0:
            self._c_mask = None
            return x
        if ctx.rng is None:
            raise ConfigurationError(f"layer {self.name!r}: training forward needs a seeded rng")
        keep = 1.0 - self.rate
        self._c_mask = (ctx.rng.random(x.shape) < keep).astype(x.dtype) / np.asarray(keep, x.dtype)
        return x * self._c_mask

    def backward(self, dout, need_dx=True):
        return dout if self._c_mask is None else dout * self._c_mask

    def describe(self):
        return {"kind": self.kind, "name": self.name, "rate": self.rate}


class ResidualBlock(Layer):
    """Two conv+ReLU layers bypassed by a strided 1x1 conv shortcut.

    ``out = relu(main(x) + shortcut(x))``; the first main conv and the
    shortcut both downsample by ``stride``.
    """

    kind = "residual"
    probe = True

    def __init__(self, name, in_maps, out_maps, stride=2, use_shortcut=True, dtype=np.float32):
        super().__init__(name)
        self.in_maps, self.out_maps, self.stride = in_maps, out_maps, stride
        self.conv_a = Conv2D(f"{name}.conv_a", in_maps, out_maps, 3, stride, 1, "relu", dtype)
        self.conv_b = Conv2D(f"{name}.conv_b", out_maps, out_maps, 3, 1, 1, "relu", dtype)
        self.shortcut = Conv2D(f"{name}.shortcut", in_maps, out_maps, 1, stride, 0, None, dtype)
        self.use_shortcut = use_shortcut
        self._c_out = None

    @property
    def convs(self) -> list[Conv2D]:
        return [self.conv_a, self.conv_b, self.shortcut]

    def init(self, rng):
        for conv in self.convs:
            conv.init(rng)

    def parameters(self):
        return [p for conv in self.convs for p in conv.parameters()]

    def probe_names(self) -> list[str]:
        return [self.conv_a.name, self.conv_b.name, self.name]

    def output_shape(self, in_shape):
        main = self.conv_b.output_shape(self.conv_a.output_shape(in_shape))
        side = self.shortcut.output_shape(in_shape)
        if main != side:
            raise DimensionError(f"layer {self.name!r}: shortcut shape {side} != main path {main}")
        return main

    def forward(self, x, ctx):
        main = self.conv_b.forward(self.conv_a.forward(x, ctx), ctx)
        if self.use_shortcut:
            out = main + self.shortcut.forward(x, ctx)
            np.maximum(out, 0, out=out)
        else:
            out = main.copy()
        if ctx.train:
            self._c_out = out
        ctx.record(self.name, out)
        return out

    def backward(self, dout, need_dx=True):
        dsum = dout * (self._c_out > 0) if self.use_shortcut else dout
        dx = self.conv_a.backward(self.conv_b.backward(dsum), need_dx)
        if self.use_shortcut:
            dside = self.shortcut.backward(dsum, need_dx)
            if need_dx:
                dx = dx + dside
        return dx

    def clear_cache(self):
        super().clear_cache()
        for conv in self.convs:
            conv.clear_cache()

    def describe(self):
        return {"kind": self.kind, "name": self.name, "in": self.in_maps, "out": self.out_maps,
                "stride": self.stride, "shortcut": self.use_shortcut}
