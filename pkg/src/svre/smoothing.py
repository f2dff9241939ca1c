"""Logistic smoothing of the failure indicator ``I[g <= 0]``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "SmootherParams",
    "mu_from_mass",
    "smooth_indicator",
    "log_smooth_indicator",
    "log_smooth_indicator_grad",
]

# Beyond this |z| the (1 - tanh z) factor is replaced by its limit.
SATURATION = 40.0


def mu_from_mass(P: float, sigma: float) -> float:
    """Location of the logistic smoother that puts mass ``P`` in failure."""
    if not 0.0 < P < 1.0:
        raise ValueError(f"P must lie in (0, 1), got {P}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return -math.sqrt(3.0) * sigma / math.pi * math.log(P / (1.0 - P))


@dataclass(frozen=True)
class SmootherParams:
    """Smoother with failure mass ``P`` and logistic standard deviation ``sigma``.

    ``mu`` is derived and cannot be passed in.
    """

    P: float = 0.9
    sigma: float = 1e-3
    mu: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", mu_from_mass(self.P, self.sigma))


def _tanh_arg(g, params: SmootherParams):
    return -math.pi / math.sqrt(3.0) * (params.mu + np.asarray(g, dtype=float)) / (2.0 * params.sigma)


def smooth_indicator(g_value, params: SmootherParams):
    """F = (1 + tanh(z)) / 2, evaluated as ``expit(2 z)`` for stability."""
    return expit(2.0 * _tanh_arg(g_value, params))


def log_smooth_indicator(g_value, params: SmootherParams):
    return -np.logaddexp(0.0, -2.0 * _tanh_arg(g_value, params))


def _one_minus_tanh(z):
    z = np.asarray(z, dtype=float)
    out = 2.0 * expit(-2.0 * z)
    return np.where(z > SATURATION, 0.0, np.where(z < -SATURATION, 2.0, out))


def log_smooth_indicator_grad(g_value, g_grad, params: SmootherParams) -> np.ndarray:
    """Gradient of ``log F`` in x given ``g`` and its gradient.

    Works for a single point (``g_value`` scalar, ``g_grad`` of shape
    ``(d,)``) or a batch (``(m,)`` and ``(m, d)``).  The result is always
    ``-grad g`` times a factor in ``[0, pi / (sqrt(3) sigma)]``.
    """
    g_grad = np.asarray(g_grad, dtype=float)
    factor = _one_minus_tanh(_tanh_arg(g_value, params))
    scale = -math.pi / (2.0 * math.sqrt(3.0) * params.sigma) * factor
    return np.asarray(scale)[..., None] * g_grad
