"""One particle-transport step of the Stein variational rare event estimator.

Particles move by ``x <- x + eps(x) * phi(x)`` where ``phi`` is the
empirical Stein velocity field built from the inducing particles only.
The log-density of every particle is updated with ``-log det`` of the
Jacobian of that map.

Jacobians use the standard convention ``J[a, b] = d phi_a / d y_b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .kernel import KernelConfig
from .problems import LimitStateProblem
from .smoothing import SmootherParams, log_smooth_indicator_grad

__all__ = [
    "TransportError",
    "TransformNotInvertible",
    "StepCollapse",
    "NonFiniteModelOutput",
    "TransportConfig",
    "Ensemble",
    "VelocityField",
    "StepDiagnostics",
    "Rates",
    "std_normal_logpdf",
    "score_target",
    "stein_velocity",
    "l2_rates",
    "rmsprop_rates",
    "logdet_update",
    "trace_logdet_update",
    "adaptive_base_rate",
    "transport_step",
]

STATIONARY_NORM = 1e-12
EXACT_DET_MAX_DIM = 50


class TransportError(RuntimeError):
    """A transport step could not be carried out."""


class TransformNotInvertible(TransportError):
    pass


class StepCollapse(TransportError):
    pass


class NonFiniteModelOutput(TransportError):
    pass


@dataclass(frozen=True)
class TransportConfig:
    """Knobs of a transport step.

    ``base_rate=None`` picks 1.0 for l2 normalization and 0.1 for RMSProp.
    ``det_mode="auto"`` uses the exact determinant up to 50 dimensions and
    the trace approximation above.  A step is accepted when every exact
    determinant is positive, or every linearized one lies in ``corridor``.
    With ``shrink_on_fold`` a rejected step is retried at half the base
    rate; otherwise the run aborts.
    """

    normalization: str = "l2"
    base_rate: float | None = None
    rate_policy: str = "constant"
    det_mode: str = "auto"
    corridor: tuple[float, float] = (0.5, 1.5)
    alpha: float = 0.9
    nugget: float = 1e-6
    min_rate: float = 1e-6
    shrink_on_fold: bool = True

    def __post_init__(self):
        if self.normalization not in ("l2", "rmsprop"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.rate_policy not in ("constant", "adaptive"):
            raise ValueError(f"unknown rate policy {self.rate_policy!r}")
        if self.det_mode not in ("exact", "trace", "auto"):
            raise ValueError(f"unknown det mode {self.det_mode!r}")
        if self.base_rate is not None and not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        lo, hi = self.corridor
        if not (0 < lo < 1 < hi):
            raise ValueError("corridor must satisfy 0 < lo < 1 < hi")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.nugget > 0:
            raise ValueError("nugget must be positive")
        object.__setattr__(self, "corridor", (float(lo), float(hi)))

    @property
    def rate(self) -> float:
        if self.base_rate is not None:
            return self.base_rate
        return 1.0 if self.normalization == "l2" else 0.1

    def resolved_det_mode(self, dim: int) -> str:
        if self.det_mode != "auto":
            return self.det_mode
        return "exact" if dim <= EXACT_DET_MAX_DIM else "trace"


def std_normal_logpdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum(x * x, axis=-1) - 0.5 * x.shape[-1] * math.log(2 * math.pi)


@dataclass
class Ensemble:
    """Particle system; rows ``[:n_grad]`` are inducing, the rest estimation."""

    positions: np.ndarray
    log_q: np.ndarray
    rmsprop_v2: np.ndarray
    n_grad: int
    step: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.log_q = np.asarray(self.log_q, dtype=float)
        self.rmsprop_v2 = np.asarray(self.rmsprop_v2, dtype=float)
        n_tot = self.positions.shape[0]
        if self.log_q.shape != (n_tot,) or self.rmsprop_v2.shape != self.positions.shape:
            raise ValueError("ensemble arrays have inconsistent shapes")
        if not 1 <= self.n_grad < n_tot:
            raise ValueError("need at least one inducing and one estimation particle")

    @classmethod
    def from_positions(cls, positions, n_grad: int) -> "Ensemble":
        positions = np.asarray(positions, dtype=float)
        return cls(positions, std_normal_logpdf(positions), np.zeros_like(positions), n_grad)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def inducing(self) -> np.ndarray:
        return self.positions[: self.n_grad]

    @property
    def estimation(self) -> np.ndarray:
        return self.positions[self.n_grad :]

    @property
    def estimation_log_q(self) -> np.ndarray:
        return self.log_q[self.n_grad :]

    def copy(self) -> "Ensemble":
        return Ensemble(
            self.positions.copy(), self.log_q.copy(), self.rmsprop_v2.copy(), self.n_grad, self.step
        )


class VelocityField:
    """Empirical Stein velocity at a set of query points.

    ``phi(y) = mean_i [k(x_i, y) s_i + grad_{x_i} k(x_i, y)]`` over the
    inducing particles ``x_i`` with scores ``s_i``.  Jacobian pieces are
    computed lazily since only the trace is needed in high dimension.
    """

    def __init__(self, inducing, scores, ell: float, query):
        self.inducing = np.asarray(inducing, dtype=float)
        self.scores = np.asarray(scores, dtype=float)
        self.query = np.asarray(query, dtype=float)
        if self.inducing.shape != self.scores.shape:
            raise ValueError("inducing positions and scores differ in shape")
        if self.query.ndim != 2 or self.query.shape[1] != self.inducing.shape[1]:
            raise ValueError("query points have the wrong dimension")
        if not ell > 0:
            raise ValueError("bandwidth must be positive")
        self.ell = float(ell)
        # r[q, i] = x_i - y_q
        self.diffs = self.inducing[None, :, :] - self.query[:, None, :]
        self.kmat = np.exp(-np.sum(self.diffs**2, axis=2) / (2 * self.ell**2))
        n = self.inducing.shape[0]
        repulsion = -np.einsum("qi,qid->qd", self.kmat, self.diffs) / self.ell**2
        # einsum keeps each row's reduction independent of the other rows
        self.phi = (np.einsum("qi,id->qd", self.kmat, self.scores) + repulsion) / n

    @property
    def n_inducing(self) -> int:
        return self.inducing.shape[0]

    @property
    def dim(self) -> int:
        return self.inducing.shape[1]

    @cached_property
    def phi_jac(self) -> np.ndarray:
        """Full Jacobians, shape ``(m, d, d)``."""
        l2 = self.ell**2
        K, S, R = self.kmat, self.scores, self.diffs
        jac = np.einsum("qi,ia,qib->qab", K, S, R) / l2
        jac -= np.einsum("qi,qia,qib->qab", K, R, R) / l2**2
        idx = np.arange(self.dim)
        jac[:, idx, idx] += K.sum(axis=1)[:, None] / l2
        return jac / self.n_inducing

    def jac_diagonal(self) -> np.ndarray:
        """``J[q, a, a]`` for every query point, shape ``(m, d)``."""
        l2 = self.ell**2
        K, S, R = self.kmat, self.scores, self.diffs
        diag = np.einsum("qi,ia,qia->qa", K, S, R) / l2
        diag += K.sum(axis=1)[:, None] / l2
        diag -= np.einsum("qi,qia->qa", K, R**2) / l2**2
        return diag / self.n_inducing

    def jac_quadratic(self, v, w) -> np.ndarray:
        """``v_q^T J_q w_q`` for per-query vectors ``v, w`` of shape ``(m, d)``."""
        l2 = self.ell**2
        K, S, R = self.kmat, self.scores, self.diffs
        vs = np.einsum("qd,id->qi", v, S)
        wr = np.einsum("qd,qid->qi", w, R)
        vr = np.einsum("qd,qid->qi", v, R)
        vw = np.sum(v * w, axis=1)
        total = np.sum(K * (vs * wr / l2 - vr * wr / l2**2), axis=1) + K.sum(axis=1) * vw / l2
        return total / self.n_inducing

    def jac_trace(self) -> np.ndarray:
        return self.jac_diagonal().sum(axis=1)


def score_target(problem: LimitStateProblem, smoother: SmootherParams, x) -> np.ndarray:
    """Score of the smoothed target, ``grad log F(x) - x``.

    Costs one model and one gradient call per point; ``x`` may be a single
    point or a batch.
    """
    x = np.asarray(x, dtype=float)
    scores, _ = _scores_and_values(problem, smoother, np.atleast_2d(x))
    return scores[0] if x.ndim == 1 else scores


def _scores_and_values(problem, smoother, x):
    g = problem.eval(x)
    dg = problem.grad(x)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(dg))):
        raise NonFiniteModelOutput("limit-state function or its gradient is not finite")
    return log_smooth_indicator_grad(g, dg, smoother) - x, g


def stein_velocity(inducing_positions, inducing_scores, ell: float, query_points) -> VelocityField:
    return VelocityField(inducing_positions, inducing_scores, ell, query_points)


class Rates(NamedTuple):
    """Per-particle learning rates and the Jacobian factor ``A``.

    The step Jacobian is ``I + base_rate * A``.  ``A`` is ``None`` when only
    its trace was requested.
    """

    rates: np.ndarray
    A: np.ndarray | None
    traces: np.ndarray
    stationary: np.ndarray
    v2: np.ndarray | None = None


def l2_rates(field: VelocityField, base_rate: float, full: bool = True) -> Rates:
    """Step length ``base_rate`` along the unit velocity direction.

    ``A = (I - u u^T) J / |phi|`` with ``u = phi / |phi|``.
    """
    phi = field.phi
    norms = np.linalg.norm(phi, axis=1)
    stationary = norms < STATIONARY_NORM
    safe = np.where(stationary, 1.0, norms)
    rates = np.where(stationary, 0.0, base_rate / safe)
    u = phi / safe[:, None]
    live = (~stationary).astype(float)
    if full:
        jac = field.phi_jac
        A = jac - u[:, :, None] * np.einsum("qa,qab->qb", u, jac)[:, None, :]
        A *= (live / safe)[:, None, None]
        traces = np.trace(A, axis1=1, axis2=2)
    else:
        A = None
        traces = (field.jac_trace() - field.jac_quadratic(u, u)) * live / safe
    return Rates(rates, A, traces, stationary)


def rmsprop_rates(
    v2_prev,
    step: int,
    field: VelocityField,
    base_rate: float,
    alpha: float = 0.9,
    nugget: float = 1e-6,
    full: bool = True,
) -> Rates:
    """RMSProp rates ``base_rate / (nugget + v)`` per particle and coordinate.

    The moving average starts at ``phi^2`` and is then updated as
    ``v^2 <- alpha v^2 + (1 - alpha) phi^2``.  For ``step > 0`` the Jacobian
    factor is ``diag(alpha v_prev^2 / v^3) J`` (nugget ignored in the rate
    derivative); at ``step == 0`` it is zero.
    """
    phi2 = field.phi**2
    if step == 0:
        v2 = phi2
        coef = np.zeros_like(phi2)
    else:
        v2_prev = np.asarray(v2_prev, dtype=float)
        v2 = alpha * v2_prev + (1 - alpha) * phi2
        v3 = v2**1.5
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(v3 > 0, alpha * v2_prev / v3, 0.0)
    v = np.sqrt(v2)
    rates = base_rate / (nugget + v)
    stationary = np.all(v2 == 0, axis=1)
    if full:
        A = coef[:, :, None] * field.phi_jac
        traces = np.trace(A, axis1=1, axis2=2)
    else:
        A = None
        traces = np.sum(coef * field.jac_diagonal(), axis=1)
    return Rates(rates, A, traces, stationary, v2)


def logdet_update(A, base_rate: float, mode: str = "exact"):
    """Log-density increment ``-log det(I + base_rate A)``.

    ``A`` is a single ``(d, d)`` matrix or a stack ``(m, d, d)``.  In
    ``trace`` mode the determinant is linearized to ``1 + base_rate tr A``.
    Raises :class:`TransformNotInvertible` if any determinant is not positive.
    """
    A = np.asarray(A, dtype=float)
    if mode == "trace":
        return trace_logdet_update(np.trace(A, axis1=-2, axis2=-1), base_rate)
    if mode != "exact":
        raise ValueError(f"unknown det mode {mode!r}")
    d = A.shape[-1]
    sign, logabs = np.linalg.slogdet(np.eye(d) + base_rate * A)
    if np.any(sign <= 0) or not np.all(np.isfinite(logabs)):
        raise TransformNotInvertible("Jacobian determinant is not positive")
    return -logabs


def trace_logdet_update(traces, base_rate: float):
    lin = 1.0 + base_rate * np.asarray(traces, dtype=float)
    if np.any(lin <= 0) or not np.all(np.isfinite(lin)):
        raise TransformNotInvertible("linearized Jacobian determinant is not positive")
    return -np.log(lin)


def adaptive_base_rate(traces, corridor=(0.5, 1.5), cap: float = 1.0, min_rate: float = 1e-6) -> float:
    """Largest rate ``<= cap`` keeping every ``1 + rate * trace`` in the corridor."""
    lo, hi = corridor
    traces = np.asarray(traces, dtype=float)
    rate = float(cap)
    neg = traces[traces < 0]
    pos = traces[traces > 0]
    if neg.size:
        rate = min(rate, float(np.min((lo - 1.0) / neg)))
    if pos.size:
        rate = min(rate, float(np.min((hi - 1.0) / pos)))
    if rate < min_rate:
        raise StepCollapse(f"admissible base rate {rate:.3g} below {min_rate:g}")
    return rate


@dataclass
class StepDiagnostics:
    base_rate_used: float
    min_det: float
    max_det: float
    velocity_norms: dict
    bandwidth: float
    n_stationary: int
    n_shrinks: int
    inducing_g: np.ndarray = dc_field(repr=False)
    inducing_log_w: np.ndarray = dc_field(repr=False)


def transport_step(
    ensemble: Ensemble,
    problem: LimitStateProblem,
    smoother: SmootherParams,
    kernel_cfg: KernelConfig,
    config: TransportConfig,
) -> tuple[Ensemble, StepDiagnostics]:
    """Score the inducing particles, then move and reweight every particle.

    Returns a new ensemble; the input is left untouched, also when the step
    fails.  The diagnostics carry the inducing g-values and log-weights
    ``log p0 - log q`` at the positions *before* the move.
    """
    x = ensemble.positions
    inducing = ensemble.inducing
    scores, g_ind = _scores_and_values(problem, smoother, inducing)

    kcfg = kernel_cfg.resolve(config.normalization)
    ell = kcfg.bandwidth(inducing)
    vfield = stein_velocity(inducing, scores, ell, x)

    mode = config.resolved_det_mode(ensemble.dim)
    full = mode == "exact"
    if config.normalization == "l2":
        unit = l2_rates(vfield, 1.0, full=full)
    else:
        unit = rmsprop_rates(
            ensemble.rmsprop_v2, ensemble.step, vfield, 1.0, config.alpha, config.nugget, full=full
        )

    if config.rate_policy == "adaptive":
        rate = adaptive_base_rate(unit.traces, config.corridor, config.rate, config.min_rate)
    else:
        rate = config.rate

    shrinks = 0
    while True:
        try:
            if full:
                dlogq = logdet_update(unit.A, rate, "exact")
            else:
                lin = 1.0 + rate * unit.traces
                lo, hi = config.corridor
                if np.any(lin < lo) or np.any(lin > hi):
                    raise TransformNotInvertible("linearized determinant outside the corridor")
                dlogq = trace_logdet_update(unit.traces, rate)
            break
        except TransformNotInvertible:
            if not config.shrink_on_fold:
                raise
            rate *= 0.5
            shrinks += 1
            if rate < config.min_rate:
                raise StepCollapse("no admissible base rate keeps the transform invertible")

    rates = rate * unit.rates
    step_vec = rates[:, None] * vfield.phi if rates.ndim == 1 else rates * vfield.phi
    new_positions = x + step_vec
    new_log_q = ensemble.log_q + dlogq
    if not (np.all(np.isfinite(new_positions)) and np.all(np.isfinite(new_log_q))):
        raise NonFiniteModelOutput("non-finite particle state after transport")

    v2 = unit.v2 if unit.v2 is not None else ensemble.rmsprop_v2
    new = Ensemble(new_positions, new_log_q, v2, ensemble.n_grad, ensemble.step + 1)

    dets = np.exp(-dlogq)
    norms = np.linalg.norm(vfield.phi, axis=1)
    diag = StepDiagnostics(
        base_rate_used=rate,
        min_det=float(dets.min()),
        max_det=float(dets.max()),
        velocity_norms={
            "min": float(norms.min()),
            "mean": float(norms.mean()),
            "max": float(norms.max()),
        },
        bandwidth=ell,
        n_stationary=int(np.count_nonzero(unit.stationary)),
        n_shrinks=shrinks,
        inducing_g=np.asarray(g_ind, dtype=float),
        inducing_log_w=std_normal_logpdf(inducing) - ensemble.log_q[: ensemble.n_grad],
    )
    return new, diag
