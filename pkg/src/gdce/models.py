"""The three concrete networks.

The curve predictor ("gdce") maps an image to its per-iteration curve
coefficients through a conv/pool feature stack, adaptive 4x4 pooling, and a
three-layer dense head ending in tanh (so every coefficient lands in (-1, 1)).
The discriminator is a standard conv classifier trained on the reference
domain and then frozen; during curve training it only supplies gradients with
respect to its input. The perceptual extractor is a fixed-seed random conv
stack tapped at a shallow layer; its features define the appearance-matching
distance. Random features are a stand-in for a pretrained backbone: they
preserve the loss's role (low-level appearance matching) without shipping
foreign weights, and the pinned seed keeps them reproducible.

Pooling stops once the running spatial size drops below 8, so a deep stack on
a small input degrades to constant-resolution blocks instead of dying in the
pool chain; the adaptive pool always sees at least 4x4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curve import apply_curve
from .image import UnitImage
from .nn import (
    AdaptiveAvgPool,
    AvgPool2x2,
    Conv3x3,
    Dense,
    Flatten,
    LeakyReLU,
    Network,
    Tanh,
)

GDCE_ROLE = "gdce"
DISCRIMINATOR_ROLE = "discriminator"
EXTRACTOR_ROLE = "extractor"

DEFAULT_EXTRACTOR_SEED = 101

MIN_POOL_SIZE = 8  # stop halving below this so the adaptive pool sees >= 4x4

HEAD_INIT_SCALE = 0.1  # final dense layer damped so initial curves start near identity


@dataclass(frozen=True)
class GdceConfig:
    num_blocks: int = 4  # conv+pool blocks ahead of the dense head
    conv_channels: int = 16
    n_iterations: int = 8
    dense_sizes: tuple[int, int] = (128, 64)
    image_size: int = 64

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"need at least one conv block, got {self.num_blocks}")
        if self.n_iterations < 1:
            raise ValueError(f"need at least one curve iteration, got {self.n_iterations}")
        if self.conv_channels < 1 or self.image_size < 4:
            raise ValueError("conv_channels must be >= 1 and image_size >= 4")


def _pool_plan(image_size: int, blocks: int) -> list[bool]:
    plan = []
    size = image_size
    for _ in range(blocks):
        if size >= MIN_POOL_SIZE and size % 2 == 0:
            plan.append(True)
            size //= 2
        else:
            plan.append(False)
    return plan


def build_gdce(cfg: GdceConfig, seed: int, dtype=np.float32) -> Network:
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = 1
    for pooled in _pool_plan(cfg.image_size, cfg.num_blocks):
        layers += [Conv3x3(in_ch, cfg.conv_channels, rng=rng, dtype=dtype), LeakyReLU()]
        if pooled:
            layers.append(AvgPool2x2())
        in_ch = cfg.conv_channels
    layers += [AdaptiveAvgPool(4), Flatten()]
    width = cfg.conv_channels * 16
    for size in cfg.dense_sizes:
        layers += [Dense(width, size, rng=rng, dtype=dtype), LeakyReLU()]
        width = size
    layers += [Dense(width, cfg.n_iterations, rng=rng, dtype=dtype,
                     init_scale=HEAD_INIT_SCALE), Tanh()]
    return Network(layers, role=GDCE_ROLE, seed=seed, dtype=dtype)


def build_discriminator(num_classes: int, image_size: int = 64, seed: int = 0,
                        channels: tuple[int, ...] = (16, 32, 64, 64),
                        dense_hidden: int = 128, dtype=np.float32) -> Network:
    if num_classes < 2:
        raise ValueError(f"classifier needs >= 2 classes, got {num_classes}")
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = 1
    for ch, pooled in zip(channels, _pool_plan(image_size, len(channels))):
        layers += [Conv3x3(in_ch, ch, rng=rng, dtype=dtype), LeakyReLU()]
        if pooled:
            layers.append(AvgPool2x2())
        in_ch = ch
    layers += [AdaptiveAvgPool(4), Flatten(),
               Dense(in_ch * 16, dense_hidden, rng=rng, dtype=dtype), LeakyReLU(),
               Dense(dense_hidden, num_classes, rng=rng, dtype=dtype)]
    return Network(layers, role=DISCRIMINATOR_ROLE, seed=seed, dtype=dtype)


class PerceptualExtractor:
    """Frozen random conv stack; features come from the tap layer."""

    def __init__(self, net: Network, tap: int, upto: int):
        self.net = net
        self.tap = tap
        self._upto = upto

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x, upto=self._upto)

    def features_backward(self, grad: np.ndarray) -> np.ndarray:
        return self.net.backward(grad)

    def weight_hash(self) -> str:
        return self.net.weight_hash()

    @property
    def frozen(self) -> bool:
        return self.net.frozen


def build_extractor(tap: int = 2, depth: int = 4, channels: int = 16,
                    seed: int = DEFAULT_EXTRACTOR_SEED,
                    dtype=np.float32) -> PerceptualExtractor:
    """Conv stack of `depth` conv+leaky layers, one 2x2 pool midway.

    tap counts conv layers (1-based); features are taken right after the
    tapped activation.
    """
    if not 1 <= tap <= depth:
        raise ValueError(f"tap layer {tap} outside stack depth {depth}")
    rng = np.random.default_rng(seed)
    layers = []
    in_ch = 1
    upto = None
    for i in range(1, depth + 1):
        layers += [Conv3x3(in_ch, channels, rng=rng, dtype=dtype), LeakyReLU()]
        in_ch = channels
        if i == tap:
            upto = len(layers)
        if i == depth // 2:
            layers.append(AvgPool2x2())
    net = Network(layers, role=EXTRACTOR_ROLE, seed=seed, frozen=True, dtype=dtype)
    return PerceptualExtractor(net, tap, upto)


# ---------------------------------------------------------------------------
# Inference helpers


def gdce_predict(net: Network, batch: np.ndarray) -> np.ndarray:
    """Per-image curve coefficients, shape (B, N), all inside (-1, 1)."""
    x = np.asarray(batch)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected a (B, 1, H, W) batch, got {x.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("batch values must lie in [0, 1]")
    return net.forward(x)


def enhance(img: UnitImage, net: Network) -> UnitImage:
    """Predict this image's curve and apply it."""
    alphas = gdce_predict(net, img.values[None, None])[0]
    return apply_curve(img, np.asarray(alphas, dtype=np.float64))


def discriminate(net: Network, batch: np.ndarray) -> np.ndarray:
    """Class logits for a (B, 1, H, W) batch."""
    return net.forward(batch)
