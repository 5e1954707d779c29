"""Hilbert-Schmidt independence criterion between two sample sets.

The biased estimator tr(K_a H K_b H) / (n-1)^2 with the centering matrix
H = I - (1/n) 11^T, differentiable through both inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor


class DegenerateBandwidthError(ValueError):
    """Median pairwise distance is zero, so no rbf bandwidth exists."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"              # "linear" or "rbf"
    bandwidth: float | str = "median"

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ValueError(f"unknown bandwidth sentinel {self.bandwidth!r}")
        elif self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")


def _pairwise_sq_dists(x: Tensor) -> Tensor:
    sq = ad.tsum(ad.mul(x, x), axis=1, keepdims=True)          # (n,1)
    cross = ad.matmul(x, ad.transpose(x))                      # (n,n)
    d = ad.add(ad.sub(sq, ad.mul(cross, Tensor(np.array(2.0)))), ad.transpose(sq))
    return ad.clip_min(d, 0.0)  # guard tiny negatives from cancellation


def median_bandwidth(x: np.ndarray) -> float:
    """Median of nonzero pairwise distances (the usual rbf heuristic)."""
    sq = (x * x).sum(axis=1, keepdims=True)
    d2 = np.maximum(sq - 2 * x @ x.T + sq.T, 0.0)
    upper = d2[np.triu_indices(d2.shape[0], k=1)]
    med = float(np.sqrt(np.median(upper)))
    if med <= 0.0:
        raise DegenerateBandwidthError("all samples identical; median distance is 0")
    return med


def gram(x: Tensor, spec: KernelSpec) -> Tensor:
    """n x n kernel matrix of the rows of x."""
    n = x.data.shape[0]
    if n < 2:
        raise ContractError("gram needs at least 2 samples")
    if spec.kind == "linear":
        return ad.matmul(x, ad.transpose(x))
    sigma = (median_bandwidth(x.data) if spec.bandwidth == "median"
             else float(spec.bandwidth))
    d2 = _pairwise_sq_dists(x)
    return ad.exp(ad.mul(d2, Tensor(np.array(-1.0 / (2.0 * sigma * sigma)))))


def center_gram(k: Tensor) -> Tensor:
    """H K H as mean subtraction: exact annihilation of constant structure."""
    row = ad.tmean(k, axis=1, keepdims=True)
    col = ad.tmean(k, axis=0, keepdims=True)
    grand = ad.tmean(k)
    return ad.add(ad.sub(ad.sub(k, row), col), grand)


def hsic(z_a: Tensor, z_b: Tensor, spec: KernelSpec | None = None) -> Tensor:
    """tr(K_a H K_b H) / (n-1)^2; zero iff the centered Grams are orthogonal.

    Computed as sum((H K_a H) * K_b) / (n-1)^2, which equals the trace form
    by cyclicity and H^2 = H but needs no n^3 matmul.
    """
    if spec is None:
        spec = KernelSpec()
    n = z_a.data.shape[0]
    if z_b.data.shape[0] != n:
        raise ContractError("hsic needs equal sample counts")
    if n < 2:
        raise ContractError("hsic needs at least 2 samples")
    k_a = gram(z_a, spec)
    k_b = gram(z_b, spec)
    prod = ad.mul(center_gram(k_a), k_b)
    return ad.mul(ad.tsum(prod), Tensor(np.array(1.0 / (n - 1) ** 2)))
