"""Central finite-difference oracles for the analytic gradients.

Everything here works on float64 copies: the contract (relative error below
1e-4 at h=1e-4) only holds in double precision. The probe loss is sum(w * y)
for a fixed random cotangent w, which exercises every output element.
"""

from __future__ import annotations

import numpy as np


def numeric_gradient(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar f() with respect to x, mutated in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def check_layer_gradients(layer, x: np.ndarray, rng: np.random.Generator,
                          h: float = 1e-4) -> dict[str, float]:
    """Max relative FD error for the input and every parameter of one layer.

    The layer must be built in float64. Returns {"input": e, "<param>": e, ...}.
    """
    x = np.asarray(x, dtype=np.float64)
    w = rng.standard_normal(layer.forward(x.copy()).shape)

    def loss():
        return float((w * layer.forward(x)).sum())

    out = layer.forward(x)
    gx = layer.backward(w.astype(out.dtype), param_grads=True)
    errors = {"input": max_rel_error(gx, numeric_gradient(loss, x, h))}
    for p in layer.params():
        errors[p.name] = max_rel_error(p.grad, numeric_gradient(loss, p.data, h))
    return errors
