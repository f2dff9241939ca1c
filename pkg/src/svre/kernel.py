"""Isotropic Gaussian RBF kernel, its derivatives and bandwidth selection.

``k(x, y) = exp(-|x - y|^2 / (2 ell^2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "KernelConfig",
    "DegenerateEnsemble",
    "rbf",
    "rbf_grad_x",
    "rbf_grad_y",
    "rbf_hess_xy",
    "median_bandwidth",
]


class DegenerateEnsemble(ValueError):
    """All samples coincide, so no bandwidth can be derived from them."""


STRATEGIES = ("median", "fixed", "auto")


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth policy.

    ``strategy="auto"`` resolves to ``fixed`` under l2 normalization and to
    ``median`` under RMSProp.
    """

    strategy: str = "auto"
    fixed_length: float = 10.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown bandwidth strategy {self.strategy!r}")
        if not self.fixed_length > 0:
            raise ValueError("fixed_length must be positive")

    def resolve(self, normalization: str) -> "KernelConfig":
        if self.strategy != "auto":
            return self
        strategy = "fixed" if normalization == "l2" else "median"
        return KernelConfig(strategy, self.fixed_length)

    def bandwidth(self, samples: np.ndarray) -> float:
        if self.strategy == "fixed":
            return self.fixed_length
        if self.strategy == "median":
            return median_bandwidth(samples)
        raise ValueError("resolve() the 'auto' strategy before use")


def rbf(x, y, ell: float) -> float:
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-(diff @ diff) / (2.0 * ell**2)))


def rbf_grad_x(x, y, ell: float) -> np.ndarray:
    """Gradient of ``k`` in its first argument: ``-(x - y) k / ell^2``."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return -diff * rbf(x, y, ell) / ell**2


def rbf_grad_y(x, y, ell: float) -> np.ndarray:
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return diff * rbf(x, y, ell) / ell**2


def rbf_hess_xy(x, y, ell: float) -> np.ndarray:
    """Mixed second derivative ``(I / ell^2 - r r^T / ell^4) k`` with ``r = x - y``."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    k = rbf(x, y, ell)
    return (np.eye(len(diff)) / ell**2 - np.outer(diff, diff) / ell**4) * k


def median_bandwidth(samples) -> float:
    """Median heuristic ``ell^2 = median(|x_i - x_j|)^2 / (2 log n)``.

    The median runs over all ``n (n - 1) / 2`` pairwise distances.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    if n < 2:
        raise ValueError("median bandwidth needs at least two samples")
    dists = pdist(samples)
    if not np.any(dists > 0):
        raise DegenerateEnsemble("all samples are identical")
    med = float(np.median(dists))
    if med == 0.0:
        raise DegenerateEnsemble("median pairwise distance is zero")
    return math.sqrt(med**2 / (2.0 * math.log(n)))
