"""Sequential network container with role tagging and a freeze contract.

A Network strings layers together, checks every activation for NaN/Inf at op
boundaries, and keeps track of which layers ran so backward can walk exactly
that prefix (partial forward serves feature taps). Frozen networks still
propagate gradients to their input but never allocate parameter gradients.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import NumericalError
from .layers import Layer, Param, layer_from_spec


class Network:
    def __init__(self, layers: list[Layer], role: str, seed: int | None = None,
                 frozen: bool = False, dtype=np.float32):
        self.layers = list(layers)
        self.role = role
        self.seed = seed
        self.frozen = frozen
        self.dtype = np.dtype(dtype)
        self._ran: list[Layer] | None = None

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def named_params(self) -> list[tuple[str, Param]]:
        out = []
        for i, layer in enumerate(self.layers):
            for p in layer.params():
                out.append((f"{i}.{layer.spec()['kind']}.{p.name}", p))
        return out

    def forward(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if not np.isfinite(x).all():
            raise NumericalError(f"{self.role}: non-finite network input")
        run = self.layers if upto is None else self.layers[:upto]
        for i, layer in enumerate(run):
            x = layer.forward(x)
            if not np.isfinite(x).all():
                raise NumericalError(
                    f"{self.role}: non-finite activation after layer "
                    f"{i} ({layer.spec()['kind']})"
                )
        self._ran = run
        return x

    def backward(self, grad_out: np.ndarray, param_grads: bool = True) -> np.ndarray:
        """Walk the most recent forward in reverse; the cache is consumed."""
        if self._ran is None:
            raise RuntimeError(f"{self.role}: backward called before forward")
        g = np.asarray(grad_out, dtype=self.dtype)
        want = param_grads and not self.frozen
        for layer in reversed(self._ran):
            g = layer.backward(g, param_grads=want)
        self._ran = None
        return g

    def descriptor(self) -> dict:
        return {
            "role": self.role,
            "seed": self.seed,
            "frozen": self.frozen,
            "layers": [layer.spec() for layer in self.layers],
        }

    def weight_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_params():
            h.update(name.encode())
            h.update(str(p.shape).encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def network_from_descriptor(desc: dict, dtype=np.float32) -> Network:
    """Rebuild the architecture (weights zeroed) from descriptor(). """
    layers = [layer_from_spec(d, dtype) for d in desc["layers"]]
    return Network(layers, role=desc["role"], seed=desc.get("seed"),
                   frozen=bool(desc.get("frozen", False)), dtype=dtype)
