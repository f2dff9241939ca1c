"""Limit-state functions in standard-normal space.

A limit-state function (LSF) ``g`` maps an input ``x`` to a scalar; the
failure event is ``{g(x) <= 0}``.  Every problem here is defined directly
in standard-normal space and exposes an exact gradient.

Evaluation accepts either a single point of shape ``(d,)`` or a batch of
shape ``(m, d)``.  Call counters count *points*, so evaluating a batch of
``m`` points adds ``m`` model calls.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

__all__ = [
    "EvalRecord",
    "LimitStateProblem",
    "linear_lsf",
    "quadratic_lsf",
    "fourbranch_lsf",
    "fourbranch_branches",
    "gradient_check",
]

BatchFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EvalRecord:
    x: np.ndarray
    g_value: float
    gradient: np.ndarray | None = None

    def __post_init__(self):
        if self.gradient is not None and len(self.gradient) != len(self.x):
            raise ValueError("gradient length does not match x")


class LimitStateProblem:
    """An LSF with its gradient and thread-safe call counters.

    Parameters
    ----------
    dim : int
        Input dimension.
    value_fn, grad_fn : callable
        Vectorized callables taking an ``(m, dim)`` array and returning
        ``(m,)`` values and ``(m, dim)`` gradients respectively.
    name : str
        Identifier used in reports.
    p_ref : float, optional
        Known exact failure probability, if any.
    """

    def __init__(
        self,
        dim: int,
        value_fn: BatchFn,
        grad_fn: BatchFn,
        name: str = "lsf",
        p_ref: float | None = None,
        params: dict | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.name = name
        self.p_ref = p_ref
        self.params = dict(params or {})
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self._lock = threading.Lock()
        self.model_calls = 0
        self.gradient_calls = 0

    def __repr__(self):
        return f"LimitStateProblem(name={self.name!r}, dim={self.dim})"

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.ndim != 2 or xb.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return xb, single

    def eval(self, x) -> float | np.ndarray:
        """g(x) for one point (returns float) or a batch (returns array)."""
        xb, single = self._as_batch(x)
        out = np.asarray(self._value_fn(xb), dtype=float)
        with self._lock:
            self.model_calls += xb.shape[0]
        return float(out[0]) if single else out

    def grad(self, x) -> np.ndarray:
        xb, single = self._as_batch(x)
        out = np.asarray(self._grad_fn(xb), dtype=float)
        with self._lock:
            self.gradient_calls += xb.shape[0]
        return out[0] if single else out

    __call__ = eval

    def record(self, x, with_gradient: bool = True) -> EvalRecord:
        x = np.asarray(x, dtype=float)
        return EvalRecord(x, self.eval(x), self.grad(x) if with_gradient else None)

    def reset_counters(self):
        with self._lock:
            self.model_calls = 0
            self.gradient_calls = 0


def linear_lsf(beta: float, dim: int) -> LimitStateProblem:
    """g(x) = beta - sum(x) / sqrt(d); exact p_F = Phi(-beta)."""
    if not math.isfinite(beta):
        raise ValueError("beta must be finite")
    scale = 1.0 / math.sqrt(dim)

    def value(x):
        return beta - scale * x.sum(axis=1)

    def gradient(x):
        return np.full_like(x, -scale)

    return LimitStateProblem(
        dim, value, gradient, name="linear",
        p_ref=float(norm.cdf(-beta)), params={"d": dim, "beta": beta},
    )


def quadratic_lsf(beta: float, kappa: float, dim: int) -> LimitStateProblem:
    """Linear LSF plus a curvature term ``kappa/4 (x1 - x2)^2``.

    The reference probability comes from :func:`svre.oracle.quadratic_reference`.
    """
    if dim < 2:
        raise ValueError("quadratic LSF needs dim >= 2")
    scale = 1.0 / math.sqrt(dim)

    def value(x):
        diff = x[:, 0] - x[:, 1]
        return beta + 0.25 * kappa * diff**2 - scale * x.sum(axis=1)

    def gradient(x):
        out = np.full_like(x, -scale)
        half = 0.5 * kappa * (x[:, 0] - x[:, 1])
        out[:, 0] += half
        out[:, 1] -= half
        return out

    return LimitStateProblem(
        dim, value, gradient, name="quadratic",
        params={"d": dim, "beta": beta, "kappa": kappa},
    )


_SQRT2 = math.sqrt(2.0)


def fourbranch_branches(x: np.ndarray) -> np.ndarray:
    """The four branch values, shape ``(m, 4)``, for a batch ``(m, 2)``."""
    x1, x2 = x[:, 0], x[:, 1]
    quad = 0.1 * (x1 - x2) ** 2
    s = (x1 + x2) / _SQRT2
    return np.stack(
        [
            quad - s + 3.0,
            quad + s + 3.0,
            x1 - x2 + 7.0 / _SQRT2,
            x2 - x1 + 7.0 / _SQRT2,
        ],
        axis=1,
    )


def fourbranch_lsf(gamma: float) -> LimitStateProblem:
    """Series system of four branches, ``g = min_i g_i + gamma``.

    Failure is ``{min_i g_i <= -gamma}``, so a larger ``gamma`` pushes every
    failure domain further out.  The gradient is that of the minimizing
    branch; ties go to the lowest branch index.
    """

    def value(x):
        return fourbranch_branches(x).min(axis=1) + gamma

    def gradient(x):
        which = np.argmin(fourbranch_branches(x), axis=1)
        d = 0.2 * (x[:, 0] - x[:, 1])
        r = 1.0 / _SQRT2
        candidates = np.stack(
            [
                np.stack([d - r, -d - r], axis=1),
                np.stack([d + r, -d + r], axis=1),
                np.broadcast_to([1.0, -1.0], x.shape),
                np.broadcast_to([-1.0, 1.0], x.shape),
            ],
            axis=1,
        )
        return candidates[np.arange(len(x)), which]

    return LimitStateProblem(2, value, gradient, name="fourbranch", params={"gamma": gamma})


def gradient_check(problem: LimitStateProblem, x, h: float = 1e-5) -> float:
    """Max relative component error between central differences and ``grad``.

    The error of component ``j`` is ``|fd_j - grad_j| / max(1, |grad_j|)``.
    Returns ``inf`` when any evaluation is non-finite.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    d = problem.dim
    steps = np.eye(d) * h
    pts = np.concatenate([x + steps, x - steps])
    vals = problem.eval(pts)
    analytic = problem.grad(x)
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(analytic))):
        return math.inf
    fd = (vals[:d] - vals[d:]) / (2 * h)
    return float(np.max(np.abs(fd - analytic) / np.maximum(1.0, np.abs(analytic))))
