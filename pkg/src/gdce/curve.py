"""Iterative quadratic tone curve: forward application and analytic gradients.

One pass maps every pixel x to x + a*x*(1-x). Composing N passes with
per-pass coefficients a_1..a_N yields a rich family of global monotone tone
curves on [0, 1] that fixes the endpoints and never needs clamping: each pass
keeps values inside [x^2, 2x - x^2] whenever |a| <= 1.

Gradients are computed by an explicit chain-rule recurrence (no autodiff),
so the engine is independently checkable against finite differences:

    dI_n/dI_{n-1} = 1 + a_n * (1 - 2*I_{n-1})
    dI_n/da_n     = I_{n-1} * (1 - I_{n-1})
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import UnitImage


@dataclass(frozen=True)
class CurveCoefficients:
    """Per-iteration correction coefficients, each in [-1, 1]."""

    alphas: np.ndarray

    def __post_init__(self):
        a = np.array(self.alphas, dtype=np.float64)  # copy: callers keep their buffer writable
        if a.ndim != 1 or a.size < 1:
            raise ValueError(f"alphas must be a non-empty 1-D sequence, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("alphas contain non-finite values")
        if np.abs(a).max() > 1.0:
            raise ValueError(f"coefficient outside [-1, 1]: {a[np.abs(a).argmax()]}")
        object.__setattr__(self, "alphas", a)
        a.setflags(write=False)

    def __len__(self) -> int:
        return self.alphas.size

    def to_json(self) -> str:
        return json.dumps([float(a) for a in self.alphas])

    @classmethod
    def from_json(cls, text: str) -> "CurveCoefficients":
        return cls(np.asarray(json.loads(text), dtype=np.float64))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CurveCoefficients":
        return cls.from_json(Path(path).read_text())


def _as_values(img):
    if isinstance(img, UnitImage):
        return img.values
    return np.asarray(img)


def _as_alphas(c) -> np.ndarray:
    if isinstance(c, CurveCoefficients):
        return c.alphas
    return CurveCoefficients(np.asarray(c, dtype=np.float64)).alphas


def apply_curve(img, coefficients):
    """Run the iterative curve over every pixel. Output stays in [0, 1].

    Accepts a UnitImage or a plain float array in [0, 1]; returns the same
    kind. 0 and 1 are exact fixed points.
    """
    alphas = _as_alphas(coefficients)
    x = _as_values(img).astype(np.float64, copy=True)
    for a in alphas:
        x += a * x * (1.0 - x)
    if isinstance(img, UnitImage):
        return UnitImage(x)
    return x


def curve_states(img, coefficients) -> list[np.ndarray]:
    """All intermediate states I_0..I_N (N+1 arrays)."""
    alphas = _as_alphas(coefficients)
    x = _as_values(img).astype(np.float64, copy=True)
    states = [x.copy()]
    for a in alphas:
        x = x + a * x * (1.0 - x)
        states.append(x)
    return states


def curve_grad_alpha(img, coefficients) -> np.ndarray:
    """Per-pixel gradients dI_N/da_n, shape (N, *image shape).

    Backward accumulation of the per-step factors; exact, not numeric.
    """
    alphas = _as_alphas(coefficients)
    states = curve_states(img, coefficients)
    n = alphas.size
    grads = np.empty((n,) + states[0].shape, dtype=np.float64)
    factor = np.ones_like(states[0])
    for i in range(n - 1, -1, -1):
        prev = states[i]
        grads[i] = factor * prev * (1.0 - prev)
        factor = factor * (1.0 + alphas[i] * (1.0 - 2.0 * prev))
    return grads


def curve_grad_input(img, coefficients) -> np.ndarray:
    """Per-pixel gradient dI_N/dI_0: product of the per-step factors."""
    alphas = _as_alphas(coefficients)
    states = curve_states(img, coefficients)
    grad = np.ones_like(states[0])
    for i, a in enumerate(alphas):
        grad *= 1.0 + a * (1.0 - 2.0 * states[i])
    return grad


# ---------------------------------------------------------------------------
# Batched form used by the training loop: one coefficient vector per image.


def apply_curve_batch(x: np.ndarray, alphas: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Apply per-image curves to a batch.

    x: (B, 1, H, W); alphas: (B, N). Returns (output, cached states I_0..I_{N-1})
    for the backward pass.
    """
    n = alphas.shape[1]
    out = x.copy()
    states = []
    for i in range(n):
        states.append(out.copy())
        a = alphas[:, i].reshape(-1, 1, 1, 1)
        out = out + a * out * (1.0 - out)
    return out, states


def curve_backward_batch(
    grad_out: np.ndarray, alphas: np.ndarray, states: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate through the batched curve.

    Returns (grad wrt alphas (B, N), grad wrt input x (B, 1, H, W)).
    """
    n = alphas.shape[1]
    grad_alpha = np.empty_like(alphas)
    g = grad_out
    for i in range(n - 1, -1, -1):
        prev = states[i]
        grad_alpha[:, i] = (g * prev * (1.0 - prev)).sum(axis=(1, 2, 3))
        a = alphas[:, i].reshape(-1, 1, 1, 1)
        g = g * (1.0 + a * (1.0 - 2.0 * prev))
    return grad_alpha, g


# ---------------------------------------------------------------------------
# Fitting oracle: find coefficients approximating a monotone target curve.


def fit_curve_to_target(
    target: np.ndarray,
    n_iterations: int,
    passes: int = 40,
    reweight_iters: int = 60,
) -> tuple[CurveCoefficients, float]:
    """Fit coefficients to a target curve sampled on a uniform [0, 1] grid.

    Coordinate descent: each coefficient in turn is driven to a stationary
    point of the weighted squared grid error by bisection on the analytic
    gradient. An initial least-squares phase is followed by Lawson-style
    reweighting (w <- w * |e|), which steers the solution toward the
    minimum of the max grid error. The target must fix the endpoints
    (f(0)=0, f(1)=1). Returns the coefficients and the achieved max
    absolute grid error.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.size < 2:
        raise ValueError("target must be a 1-D grid of at least 2 samples")
    if abs(target[0]) > 1e-9 or abs(target[-1] - 1.0) > 1e-9:
        raise ValueError("target must fix the endpoints: f(0)=0 and f(1)=1")
    grid = np.linspace(0.0, 1.0, target.size)
    alphas = np.zeros(n_iterations, dtype=np.float64)
    weights = np.full(target.size, 1.0 / target.size)

    best = alphas.copy()
    best_err = _max_err(grid, best, target)
    # least-squares shaping, then minimax polish via reweighting
    for phase in range(1 + reweight_iters):
        if phase > 0:
            err = np.abs(apply_curve(grid, alphas) - target)
            if err.max() < 1e-12:
                break
            weights = weights * (err + 1e-6 * err.max())
            weights /= weights.sum()
        _descend(grid, target, alphas, weights, passes if phase == 0 else 2)
        cur = _max_err(grid, alphas, target)
        if cur < best_err:
            best_err, best = cur, alphas.copy()
    return CurveCoefficients(best), best_err


def _max_err(grid, alphas, target) -> float:
    return float(np.abs(apply_curve(grid, alphas) - target).max())


def _descend(grid, target, alphas, weights, passes) -> None:
    """Coordinate-descent sweeps on sum(w * e^2), in place."""
    n = alphas.size

    def tail(prefix, idx, aval):
        # value and d(value)/d(a_idx) after passes idx..n-1
        x = prefix + aval * prefix * (1.0 - prefix)
        dx = prefix * (1.0 - prefix)
        for j in range(idx + 1, n):
            dx = dx * (1.0 + alphas[j] * (1.0 - 2.0 * x))
            x = x + alphas[j] * x * (1.0 - x)
        return x, dx

    def obj_and_grad(prefix, idx, aval):
        x, dx = tail(prefix, idx, aval)
        e = x - target
        return float((weights * e * e).sum()), float((2.0 * weights * e * dx).sum())

    prev_obj = float((weights * (apply_curve(grid, alphas) - target) ** 2).sum())
    for _ in range(passes):
        prefix = grid.astype(np.float64)
        for idx in range(n):
            cur_obj, cur_grad = obj_and_grad(prefix, idx, alphas[idx])
            if abs(cur_grad) > 1e-15:
                _, glo = obj_and_grad(prefix, idx, -1.0)
                _, ghi = obj_and_grad(prefix, idx, 1.0)
                if glo >= 0.0:
                    cand = -1.0
                elif ghi <= 0.0:
                    cand = 1.0
                else:
                    lo, hi = -1.0, 1.0
                    for _ in range(50):
                        mid = 0.5 * (lo + hi)
                        if obj_and_grad(prefix, idx, mid)[1] > 0.0:
                            hi = mid
                        else:
                            lo = mid
                    cand = 0.5 * (lo + hi)
                if obj_and_grad(prefix, idx, cand)[0] < cur_obj:
                    alphas[idx] = cand
            prefix = prefix + alphas[idx] * prefix * (1.0 - prefix)
        obj = float((weights * (apply_curve(grid, alphas) - target) ** 2).sum())
        if prev_obj - obj < 1e-14:
            break
        prev_obj = obj
