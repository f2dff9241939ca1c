"""Stein variational rare event (SVRE) estimator.

Particles start from a low-discrepancy standard-normal sample, flow towards
the smoothed optimal importance density and finally yield an importance
sampling estimate of ``P[g(X) <= 0]`` from the estimation particles only.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm, qmc

from .kernel import DegenerateEnsemble, KernelConfig
from .problems import LimitStateProblem
from .smoothing import SmootherParams
from .transport import (
    Ensemble,
    StepDiagnostics,
    TransportConfig,
    TransportError,
    std_normal_logpdf,
    transport_step,
)

__all__ = [
    "SvreConfig",
    "EstimateReport",
    "init_ensemble",
    "is_estimate",
    "weight_cov_stat",
    "run_svre",
]

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
ABORTED = "aborted"


@dataclass(frozen=True)
class SvreConfig:
    n: int = 1000
    n_grad: int = 20
    delta_thresh: float = 5.0
    t_max: int = 200
    seed: int = 0
    init: str = "sobol"
    scramble: bool = True
    smoother: SmootherParams = field(default_factory=SmootherParams)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.n_grad < 1:
            raise ValueError("n_grad must be >= 1")
        if not self.delta_thresh > 0:
            raise ValueError("delta_thresh must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if self.init not in ("sobol", "lhs"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class EstimateReport:
    p_hat: float | None
    delta_hat: float | None
    iterations: int
    model_calls: int
    gradient_calls: int
    termination: str
    weights: np.ndarray | None = field(default=None, repr=False)
    final_positions: np.ndarray | None = field(default=None, repr=False)
    message: str = ""
    stop_statistic: float | None = None
    history: list[StepDiagnostics] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready summary; infinities become ``None``."""
        out = {
            "schema_version": "1.0",
            "p_hat": _finite_or_none(self.p_hat),
            "delta_hat": _finite_or_none(self.delta_hat),
            "iterations": self.iterations,
            "model_calls": self.model_calls,
            "gradient_calls": self.gradient_calls,
            "termination": self.termination,
            "message": self.message,
            "stop_statistic": _finite_or_none(self.stop_statistic),
        }
        return out


def _finite_or_none(v):
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def _unit_sample(kind: str, n: int, dim: int, rng: np.random.Generator, scramble: bool) -> np.ndarray:
    if kind == "sobol":
        try:
            engine = qmc.Sobol(dim, scramble=scramble, seed=rng)
        except ValueError:
            warnings.warn(f"Sobol engine unavailable in {dim} dimensions; using Latin hypercube")
            return _unit_sample("lhs", n, dim, rng, scramble)
        with warnings.catch_warnings():
            # balance properties need powers of two; any n is fine here
            warnings.simplefilter("ignore", UserWarning)
            if scramble:
                return engine.random(n)
            engine.fast_forward(1)  # unscrambled point 0 is the origin, Phi^-1(0) = -inf
            return engine.random(n)
    return qmc.LatinHypercube(dim, seed=rng).random(n)


def init_ensemble(config: SvreConfig, dim: int) -> Ensemble:
    """Initial particles: a transformed Sobol (or LHS) standard-normal sample."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(config.seed)
    u = _unit_sample(config.init, config.n + config.n_grad, dim, rng, config.scramble)
    tiny = np.finfo(float).tiny
    x = norm.ppf(np.clip(u, tiny, 1.0 - np.finfo(float).epsneg))
    return Ensemble.from_positions(x, config.n_grad)


def is_estimate(g_values, log_q, positions):
    """Importance sampling estimate from tracked densities.

    Returns
    -------
    p_hat : float
        Mean of the weights ``I[g <= 0] p0(x) / q(x)``.
    delta_hat : float
        Estimated coefficient of variation of ``p_hat``; ``inf`` when no
        sample failed.
    weights : ndarray
    """
    g_values = np.asarray(g_values, dtype=float)
    log_q = np.asarray(log_q, dtype=float)
    if not np.all(np.isfinite(log_q)):
        raise ValueError("log_q must be finite")
    n = len(g_values)
    failed = g_values <= 0
    log_w = std_normal_logpdf(positions) - log_q
    weights = np.where(failed, np.exp(np.where(failed, log_w, 0.0)), 0.0)
    p_hat = float(np.mean(weights))
    if not np.any(weights > 0):
        return 0.0, math.inf, weights
    # scale-free form of sum(w^2) / sum(w)^2 to avoid under/overflow
    top = log_w[failed].max()
    scaled = np.where(failed, np.exp(np.where(failed, log_w - top, 0.0)), 0.0)
    ratio = np.sum(scaled**2) / np.sum(scaled) ** 2
    delta_hat = math.sqrt(max(ratio - 1.0 / n, 0.0))
    return p_hat, delta_hat, weights


def weight_cov_stat(weights) -> tuple[float, float]:
    """Coefficient of variation of the weights and relative ESS."""
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0 or not np.any(weights > 0):
        return math.inf, 0.0
    scaled = weights / weights.max()
    mean = scaled.mean()
    delta_w = math.sqrt(max(np.mean(scaled**2) / mean**2 - 1.0, 0.0))
    return delta_w, 1.0 / (1.0 + delta_w**2)


def _log_weight_cov(g_values, log_w) -> float:
    """delta_w for hard-indicator weights given as log-weights."""
    failed = np.asarray(g_values) <= 0
    if not np.any(failed):
        return math.inf
    lw = np.where(failed, log_w, -np.inf)
    return weight_cov_stat(np.exp(lw - lw.max()))[0]


def run_svre(
    problem: LimitStateProblem,
    config: SvreConfig,
    callback: Callable[[int, Ensemble, StepDiagnostics, float], None] | None = None,
    keep_history: bool = False,
) -> EstimateReport:
    """Run the full estimator on ``problem``.

    Each iteration performs one transport step; the stopping statistic is
    the weight c.o.v. of the inducing particles, computed from the g-values
    and densities that step already had at hand.  After the loop the
    estimation particles are evaluated once.
    """
    calls0 = (problem.model_calls, problem.gradient_calls)

    def calls():
        return problem.model_calls - calls0[0], problem.gradient_calls - calls0[1]

    ensemble = init_ensemble(config, problem.dim)
    history: list[StepDiagnostics] = []
    termination = MAX_ITERATIONS
    stat = math.inf
    it = 0
    try:
        while it < config.t_max:
            ensemble, diag = transport_step(
                ensemble, problem, config.smoother, config.kernel, config.transport
            )
            it += 1
            stat = _log_weight_cov(diag.inducing_g, diag.inducing_log_w)
            if keep_history:
                history.append(diag)
            if callback is not None:
                callback(it, ensemble, diag, stat)
            log.debug("iteration %d: delta_w=%.4g rate=%.4g", it, stat, diag.base_rate_used)
            if stat <= config.delta_thresh:
                termination = CONVERGED
                break
    except (TransportError, DegenerateEnsemble) as exc:
        mc, gc = calls()
        return EstimateReport(
            None, None, it, mc, gc, ABORTED,
            final_positions=ensemble.estimation.copy(),
            message=f"{type(exc).__name__}: {exc}",
            stop_statistic=stat,
            history=history,
        )

    g_est = problem.eval(ensemble.estimation)
    p_hat, delta_hat, weights = is_estimate(g_est, ensemble.estimation_log_q, ensemble.estimation)
    mc, gc = calls()
    message = "" if p_hat > 0 else "no failure samples"
    return EstimateReport(
        p_hat, delta_hat, it, mc, gc, termination,
        weights=weights,
        final_positions=ensemble.estimation.copy(),
        message=message,
        stop_statistic=stat,
        history=history,
    )
