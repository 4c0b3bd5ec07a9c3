"""The two stock architectures: a VGG-style stack and a small ResNet."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..tensor_core import Conv2D, Dense, Dropout, Flatten, MaxPool2D, Model, ResidualBlock

VGG_PLAN = ((32, 32), (64, 64), (128, 128), (256, 256))
VGG_HIDDEN = 256
RESNET_WIDTHS = (48, 64, 128)
ARCHS = ("vgg_small", "resnet_small")


def _check_shape(input_shape, num_classes: int, allow_digit: bool = True) -> tuple[int, int, int]:
    try:
        h, w, c = (int(v) for v in input_shape)
    except (TypeError, ValueError):
        raise ConfigurationError(f"input_shape must be [H, W, C], got {input_shape!r}") from None
    if num_classes not in (2, 10):
        raise ConfigurationError(f"num_classes must be 2 or 10, got {num_classes}")
    if c != 3:
        raise ConfigurationError(f"models take 3-channel input, got C={c}")
    digit = allow_digit and (h, w) == (28, 28)
    if not digit and (h < 32 or w < 32):
        raise ConfigurationError(f"unsupported input size {h}x{w}: use 28x28 or H, W >= 32")
    return h, w, c


def build_vgg(input_shape=(28, 28, 3), num_classes: int = 10, seed: int = 0,
              dropout: float = 0.5, dtype=np.float32) -> Model:
    """Eight 3x3 conv+ReLU layers in four pooled blocks, then two dense layers."""
    h, w, c = _check_shape(input_shape, num_classes)
    layers = []
    in_maps = c
    k = 0
    for b, widths in enumerate(VGG_PLAN, start=1):
        for width in widths:
            k += 1
            layers.append(Conv2D(f"conv{k}", in_maps, width, 3, 1, 1, "relu", dtype))
            in_maps = width
        layers.append(MaxPool2D(f"pool{b}"))
        h, w = h // 2, w // 2
    features = h * w * in_maps
    layers += [
        Flatten("flatten"),
        Dense("fc1", features, VGG_HIDDEN, "relu", dtype),
        Dropout("dropout1", dropout),
        Dense("fc2", VGG_HIDDEN, num_classes, None, dtype),
    ]
    config = {"arch_id": "vgg_small", "input_shape": list(input_shape), "num_classes": num_classes,
              "dropout": dropout, "seed": seed}
    return Model(layers, input_shape, num_classes, "vgg_small", config).init(seed)


def build_resnet(input_shape=(120, 120, 3), num_classes: int = 2, seed: int = 0,
                 widths=RESNET_WIDTHS, use_shortcut: bool = True, dtype=np.float32) -> Model:
    """Three downsampling residual blocks followed by one dense layer."""
    h, w, c = _check_shape(input_shape, num_classes)
    layers = []
    in_maps = c
    for b, width in enumerate(widths, start=1):
        layers.append(ResidualBlock(f"block{b}", in_maps, width, 2, use_shortcut, dtype))
        in_maps = width
        h, w = (h + 1) // 2, (w + 1) // 2
    layers += [Flatten("flatten"), Dense("fc", h * w * in_maps, num_classes, None, dtype)]
    config = {"arch_id": "resnet_small", "input_shape": list(input_shape), "num_classes": num_classes,
              "widths": list(widths), "use_shortcut": use_shortcut, "seed": seed}
    return Model(layers, input_shape, num_classes, "resnet_small", config).init(seed)


def build_model(arch_id: str, input_shape, num_classes: int, seed: int = 0, **kwargs) -> Model:
    if arch_id == "vgg_small":
        return build_vgg(input_shape, num_classes, seed, **kwargs)
    if arch_id == "resnet_small":
        return build_resnet(input_shape, num_classes, seed, **kwargs)
    raise ConfigurationError(f"unknown architecture {arch_id!r}; expected one of {ARCHS}")


def model_from_config(config: dict) -> Model:
    """Rebuild an (initialised) model from the dict stored in ``Model.config``."""
    cfg = dict(config)
    arch = cfg.pop("arch_id", None)
    kwargs = {"seed": cfg.pop("seed", 0)}
    if arch == "vgg_small":
        kwargs["dropout"] = cfg.pop("dropout", 0.5)
    elif arch == "resnet_small":
        kwargs["widths"] = tuple(cfg.pop("widths", RESNET_WIDTHS))
        kwargs["use_shortcut"] = cfg.pop("use_shortcut", True)
    return build_model(arch, cfg.pop("input_shape"), cfg.pop("num_classes"), **kwargs)
