"""Minimal trainable layers on top of the autodiff tape."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True):
        self.w = ad.parameter((d_in, d_out), rng=rng)
        self.b = ad.parameter(np.zeros((1, d_out))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self.w)
        return ad.add(out, self.b) if self.b is not None else out

    def params(self) -> list[Tensor]:
        return [self.w] + ([self.b] if self.b is not None else [])


class Mlp:
    """Linear stack with ReLU between layers, none after the last."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        self.layers = [Linear(widths[i], widths[i + 1], rng)
                       for i in range(len(widths) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h

    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params()]


def params_checksum(params: list[Tensor]) -> str:
    """Order-sensitive hex digest of the exact parameter bytes."""
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
