"""Finite-difference battery over every differentiable operator.

Each op is checked in float64 against central differences. The curve engine
has exact analytic gradients, so it gets a much tighter tolerance than the
network layers.
"""

from dataclasses import dataclass

import numpy as np

from .curve import CurveCoefficients, apply_curve, curve_grad_alpha, curve_grad_input
from .models import GdceConfig, build_discriminator, build_extractor, build_gdce
from .nn import (
    AdaptiveAvgPool,
    AvgPool2x2,
    Conv3x3,
    Dense,
    LeakyReLU,
    Tanh,
    check_layer_gradients,
    l1_loss,
    max_rel_error,
    numeric_gradient,
    softmax_cross_entropy,
)
from .training import gdce_loss_on_refs

OP_TOL = 1e-4
CURVE_TOL = 1e-6


@dataclass(frozen=True)
class BatteryResult:
    op: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values outside [-margin, margin] so kinks sit outside the FD window."""
    return np.sign(x) * (np.abs(x) + margin)


def _layer_results(rng) -> list[BatteryResult]:
    f64 = np.float64
    cases = [
        ("conv3x3", Conv3x3(2, 3, rng=rng, dtype=f64), (2, 2, 8, 8)),
        ("avgpool2x2", AvgPool2x2(), (2, 3, 8, 8)),
        ("adaptive_avgpool", AdaptiveAvgPool(4), (2, 3, 10, 10)),
        ("dense", Dense(12, 5, rng=rng, dtype=f64), (3, 12)),
        ("leaky_relu", LeakyReLU(), (4, 7)),
        ("tanh", Tanh(), (4, 7)),
    ]
    results = []
    for name, layer, shape in cases:
        x = rng.uniform(-1.0, 1.0, size=shape)
        if name == "leaky_relu":
            x = _away_from_zero(x)
        errors = check_layer_gradients(layer, x, rng)
        results.append(BatteryResult(name, max(errors.values()), OP_TOL))
    return results


def _loss_results(rng) -> list[BatteryResult]:
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)
    _, grad = softmax_cross_entropy(logits, labels)
    num = numeric_gradient(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    ce = BatteryResult("softmax_ce", max_rel_error(grad, num), OP_TOL)

    a = rng.normal(size=(3, 6))
    b = rng.normal(size=(3, 6))
    _, grad = l1_loss(a, b)
    num = numeric_gradient(lambda: l1_loss(a, b)[0], a)
    l1 = BatteryResult("l1", max_rel_error(grad, num), OP_TOL)
    return [ce, l1]


def _curve_results(rng) -> list[BatteryResult]:
    x = rng.uniform(0.02, 0.98, size=257)
    alphas = rng.uniform(-0.95, 0.95, size=8)
    co = CurveCoefficients(alphas)

    gx = curve_grad_input(x, co)
    num = numeric_gradient(lambda: float(apply_curve(x, co).sum()), x, h=1e-5)
    input_err = max_rel_error(gx, num)

    ga = curve_grad_alpha(x, co).sum(axis=1)
    num = numeric_gradient(
        lambda: float(apply_curve(x, CurveCoefficients(alphas)).sum()), alphas, h=1e-5)
    alpha_err = max_rel_error(ga, num)
    return [BatteryResult("curve_input", input_err, CURVE_TOL),
            BatteryResult("curve_alpha", alpha_err, CURVE_TOL)]


def _composite_result(rng) -> BatteryResult:
    """Full training loss (classification + perceptual) through tiny doubles nets."""
    cfg = GdceConfig(num_blocks=1, conv_channels=2, n_iterations=2,
                     dense_sizes=(8, 4), image_size=16)
    gdce = build_gdce(cfg, seed=11, dtype=np.float64)
    disc = build_discriminator(2, 16, seed=12, channels=(2, 2), dense_hidden=4,
                               dtype=np.float64)
    disc.frozen = True
    ext = build_extractor(tap=1, depth=2, channels=2, seed=13, dtype=np.float64)
    batch = rng.uniform(0.1, 0.9, size=(2, 1, 16, 16))
    labels = np.array([0, 1])
    refs = rng.uniform(0.1, 0.9, size=(2, 1, 16, 16))

    def total():
        return gdce_loss_on_refs(batch, labels, gdce, disc, ext, refs).total

    gdce_loss_on_refs(batch, labels, gdce, disc, ext, refs)
    worst = 0.0
    for layer_idx in (0, len(gdce.layers) - 2):
        for p in gdce.layers[layer_idx].params():
            analytic = p.grad.copy()
            num = numeric_gradient(total, p.data, h=1e-6)
            worst = max(worst, max_rel_error(analytic, num))
    return BatteryResult("composite_loss", worst, OP_TOL)


def gradient_battery(seed: int = 0) -> list[BatteryResult]:
    """Check every op once; returns one result per op, worst error each."""
    rng = np.random.default_rng(seed)
    results = _layer_results(rng)
    results += _loss_results(rng)
    results += _curve_results(rng)
    results.append(_composite_result(rng))
    return results
