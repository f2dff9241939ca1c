"""One-dimensional Darcy flow with a lognormal diffusivity field.

The pressure head solves ``(kappa u')' = -J`` on ``[0, 1]`` with inflow
flux ``F`` at ``y = 0`` and ``u(1) = 1``.  Integrating twice gives

    u(y) = 1 + int_y^1 (F + Q(s)) / kappa(s) ds,    Q(s) = int_0^s J,

which is evaluated with the composite trapezoid rule on a uniform grid.
The limit state is ``g = p_thresh - max_y u(y)``.

Inputs live in standard-normal space: ``x[0]`` drives the flux and
``x[1:]`` are the Karhunen-Loeve coefficients of ``log kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import eigh
from scipy.stats import norm

from .problems import LimitStateProblem

__all__ = [
    "DarcyConfig",
    "KLBasis",
    "kl_decompose",
    "sample_field",
    "source_term",
    "solve_pressure",
    "darcy_lsf",
    "trapezoid_weights",
]

PLUME_CENTERS = (0.2, 0.4, 0.6, 0.8)
PLUME_WIDTH = 0.05
PLUME_MASS = 0.8


@dataclass(frozen=True)
class DarcyConfig:
    """Darcy problem parameters.

    ``mu_F`` and ``var_F`` default to an inflow of mean -1 and variance 0.2,
    which puts the exceedance probability at the order of 1e-5.
    """

    d: int = 10
    grid_m: int = 513
    mu_lnk: float = 1.0
    var_lnk: float = 0.3
    corr_len: float = 0.1
    mu_F: float = -1.0
    var_F: float = 0.2
    p_thresh: float = 2.7

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.grid_m < 65:
            raise ValueError("grid_m must be >= 65")
        if self.d - 1 > self.grid_m:
            raise ValueError("more KL terms than grid nodes")
        if not self.corr_len > 0:
            raise ValueError("corr_len must be positive")
        if self.var_lnk < 0 or self.var_F < 0:
            raise ValueError("variances must be nonnegative")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_m)


@dataclass(frozen=True)
class KLBasis:
    """Leading eigenpairs of the exponential correlation kernel on a grid.

    ``eigenfunctions[i]`` holds the i-th eigenfunction at the grid nodes,
    normalized to unit trapezoid-weighted L2 norm with nonnegative value
    at ``y = 0``.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    grid: np.ndarray

    @property
    def terms(self) -> int:
        return len(self.eigenvalues)


def trapezoid_weights(m: int) -> np.ndarray:
    """Composite trapezoid weights for ``m`` uniform nodes on ``[0, 1]``."""
    h = 1.0 / (m - 1)
    w = np.full(m, h)
    w[0] = w[-1] = 0.5 * h
    return w


def kl_decompose(corr_len: float, grid_m: int, terms: int) -> KLBasis:
    """Nystrom eigensolve of ``exp(-|y - y'| / corr_len)`` on a uniform grid.

    The symmetric form ``W^1/2 C W^1/2`` is diagonalized, where ``W`` holds
    the trapezoid weights; eigenvalues are returned in descending order.
    Results are cached and their arrays are read-only.
    """
    return _kl_decompose(float(corr_len), int(grid_m), int(terms))


@lru_cache(maxsize=16)
def _kl_decompose(corr_len: float, grid_m: int, terms: int) -> KLBasis:
    if not 1 <= terms <= grid_m:
        raise ValueError("need 1 <= terms <= grid_m")
    y = np.linspace(0.0, 1.0, grid_m)
    sw = np.sqrt(trapezoid_weights(grid_m))
    cov = np.exp(-np.abs(y[:, None] - y[None, :]) / corr_len)
    lam, vec = eigh(sw[:, None] * cov * sw[None, :], subset_by_index=[grid_m - terms, grid_m - 1])
    lam, vec = lam[::-1], vec[:, ::-1]
    if np.any(lam <= 0):
        raise np.linalg.LinAlgError("non-positive eigenvalue among the leading KL terms")
    funcs = (vec / sw[:, None]).T
    funcs *= np.where(funcs[:, 0] < 0, -1.0, 1.0)[:, None]
    for arr in (lam, funcs, y):
        arr.setflags(write=False)
    return KLBasis(lam, funcs, y)


def sample_field(basis: KLBasis, xi, mu_lnk: float = 1.0, var_lnk: float = 0.3) -> np.ndarray:
    """Diffusivity ``kappa`` on the grid for coefficients ``xi``.

    ``xi`` may be one vector of length ``basis.terms`` or a batch of them.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != basis.terms:
        raise ValueError(f"expected {basis.terms} KL coefficients, got {xi.shape[-1]}")
    modes = np.sqrt(basis.eigenvalues)[:, None] * basis.eigenfunctions
    return np.exp(mu_lnk + math.sqrt(var_lnk) * (xi @ modes))


def source_term(y):
    """Four Gaussian plumes of total mass 0.8 each at 0.2, 0.4, 0.6, 0.8."""
    y = np.asarray(y, dtype=float)
    return PLUME_MASS * sum(norm.pdf(y, c, PLUME_WIDTH) for c in PLUME_CENTERS)


def _cumulative_source(grid: np.ndarray) -> np.ndarray:
    return cumulative_trapezoid(source_term(grid), grid, initial=0.0)


def _tail_integral(f: np.ndarray, h: float) -> np.ndarray:
    """``int_{y_j}^1 f`` at every node by the trapezoid rule (last axis)."""
    seg = 0.5 * h * (f[..., 1:] + f[..., :-1])
    tail = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
    zero = np.zeros(f.shape[:-1] + (1,))
    return np.concatenate([tail, zero], axis=-1)


def solve_pressure(kappa_grid, F, source=source_term) -> np.ndarray:
    """Pressure head at the grid nodes for diffusivity ``kappa_grid``.

    ``kappa_grid`` is sampled on a uniform grid over ``[0, 1]``; a batch of
    fields of shape ``(b, m)`` with ``F`` of shape ``(b,)`` is accepted.
    ``source=None`` drops the source term.
    """
    kappa = np.asarray(kappa_grid, dtype=float)
    if np.any(kappa <= 0):
        raise ValueError("diffusivity must be positive")
    m = kappa.shape[-1]
    grid = np.linspace(0.0, 1.0, m)
    Q = 0.0 if source is None else cumulative_trapezoid(source(grid), grid, initial=0.0)
    F = np.asarray(F, dtype=float)[..., None]
    return 1.0 + _tail_integral((F + Q) / kappa, grid[1] - grid[0])


def darcy_lsf(config: DarcyConfig | None = None) -> LimitStateProblem:
    """Maximum pressure exceedance, ``g = p_thresh - max_j u(y_j)``.

    The gradient differentiates ``u`` at the maximizing node with that node
    held fixed; ties go to the lowest node index.
    """
    cfg = config or DarcyConfig()
    basis = kl_decompose(cfg.corr_len, cfg.grid_m, cfg.d - 1)
    grid = basis.grid
    h = grid[1] - grid[0]
    Q = _cumulative_source(grid)
    sd_F = math.sqrt(cfg.var_F)
    sd_lnk = math.sqrt(cfg.var_lnk)
    node = np.arange(cfg.grid_m)

    def state(x):
        F = cfg.mu_F + sd_F * x[:, 0]
        kappa = sample_field(basis, x[:, 1:], cfg.mu_lnk, cfg.var_lnk)
        integrand = (F[:, None] + Q) / kappa
        u = 1.0 + _tail_integral(integrand, h)
        return kappa, integrand, u

    def value(x):
        return cfg.p_thresh - state(x)[2].max(axis=1)

    def gradient(x):
        kappa, integrand, u = state(x)
        star = np.argmax(u, axis=1)[:, None]
        # trapezoid weights of int_{y*}^1 as a masked row per point
        w = np.where(node > star, h, 0.0)
        w[:, -1] = np.where(star[:, 0] < cfg.grid_m - 1, 0.5 * h, 0.0)
        np.put_along_axis(w, star, np.where(star < cfg.grid_m - 1, 0.5 * h, 0.0), axis=1)
        out = np.empty_like(x)
        out[:, 0] = -sd_F * np.sum(w / kappa, axis=1)
        modes = np.sqrt(basis.eigenvalues)[:, None] * basis.eigenfunctions
        out[:, 1:] = sd_lnk * (w * integrand) @ modes.T
        return out

    return LimitStateProblem(
        cfg.d, value, gradient, name="darcy",
        params={"d": cfg.d, "grid_m": cfg.grid_m, "p_thresh": cfg.p_thresh},
    )
