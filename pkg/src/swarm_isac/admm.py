"""Consensus ADMM over UAV positions.

Each iteration runs three steps:

1. every UAV projects ``z_n - mu_n / rho`` onto its flight ball (local);
2. the consensus variables take ``inner_steps`` gradient steps on the
   z-subproblem ``f(Z) + rho/2 sum ||q_n - z_n + mu_n/rho||^2`` (the
   gradient needs the whole swarm, see :mod:`swarm_isac.swarm`);
3. every UAV updates its dual ``mu_n += rho (q_n - z_n)`` (local).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import StepFailure, SwarmIsacError
from .gradients import consensus_value_and_grad, objective_terms
from .metrics import MetricReport
from .model import Scenario, as_points

RECORD_EVERY_ITERATION_UP_TO = 10_000
LONG_RUN_RECORD_STRIDE = 10


@dataclass(frozen=True)
class AdmmConfig:
    """Optimizer settings; the defaults are the ones used in the experiments.

    The stopping tolerances default to zero, i.e. run all ``max_iters``
    iterations: the residuals scale with ``eta`` times the change of the
    gradient and fall below 1e-6 long before the objective settles.
    """

    rho: float = 1.0
    eta: float = 1e-3
    inner_steps: int = 1
    max_iters: int = 100_000
    eps_primal: float = 0.0
    eps_dual: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            raise ValueError(f"inner_steps must be an integer >= 1, got {self.inner_steps}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if self.eps_primal < 0 or self.eps_dual < 0:
            raise ValueError("stopping tolerances must be >= 0")

    @property
    def record_stride(self):
        return 1 if self.max_iters <= RECORD_EVERY_ITERATION_UP_TO else LONG_RUN_RECORD_STRIDE


@dataclass(frozen=True, eq=False)
class SwarmState:
    """Local positions ``q``, consensus positions ``z`` and duals ``mu``, each ``(N, 3)``."""

    q: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    iter: int = 0

    def equals(self, other):
        """Bitwise equality of all arrays and the iteration counter."""
        return (self.iter == other.iter and np.array_equal(self.q, other.q)
                and np.array_equal(self.z, other.z) and np.array_equal(self.mu, other.mu))


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    objective: float
    rate_nats: float
    crb_m2: float
    primal_residual: float
    dual_residual: float
    aug_lagrangian: float

    FIELDS = ("iter", "objective", "rate_nats", "crb_m2", "primal_residual",
              "dual_residual", "aug_lagrangian")

    def as_tuple(self):
        return tuple(getattr(self, name) for name in self.FIELDS)


def initial_state(scenario: Scenario, init_z=None):
    """``q = q0``, ``z = init_z`` (default ``q0``), ``mu = 0``."""
    q0 = scenario.initial_positions
    z = q0.copy() if init_z is None else as_points(init_z, "init_z").copy()
    if z.shape != q0.shape:
        raise ValueError(f"init_z must have shape {q0.shape}, got {z.shape}")
    return SwarmState(q=q0.copy(), z=z, mu=np.zeros_like(q0), iter=0)


@njit(cache=True)
def _dist(x0, x1, x2, c0, c1, c2):
    d0, d1, d2 = x0 - c0, x1 - c1, x2 - c2
    return np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)


@njit(cache=True)
def project_rows(points, centers, r_max):
    """Project each row of ``points`` onto the ball of radius ``r_max`` around
    the matching row of ``centers``. Rows are handled independently.

    A projected point is pulled inward by a few ulps if rounding left it
    outside, so projecting it again returns it unchanged.
    """
    out = points.copy()
    for n in range(points.shape[0]):
        c0, c1, c2 = centers[n, 0], centers[n, 1], centers[n, 2]
        d0, d1, d2 = points[n, 0] - c0, points[n, 1] - c1, points[n, 2] - c2
        dist = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if dist > r_max:
            scale = r_max / dist
            for k in range(60):
                x0, x1, x2 = c0 + scale * d0, c1 + scale * d1, c2 + scale * d2
                if _dist(x0, x1, x2, c0, c1, c2) <= r_max:
                    break
                scale *= 1.0 - 2.0 ** (k - 52)
            out[n, 0], out[n, 1], out[n, 2] = x0, x1, x2
    return out


def project_ball(a, center, r_max):
    """Euclidean projection of ``a`` onto ``{x : ||x - center|| <= r_max}``."""
    if not r_max > 0:
        raise ValueError(f"r_max must be > 0, got {r_max}")
    a = np.asarray(a, dtype=float).reshape(1, 3)
    center = np.asarray(center, dtype=float).reshape(1, 3)
    return project_rows(a, center, float(r_max))[0]


def step1_local(state: SwarmState, q0, cfg: AdmmConfig, r_max):
    """Local update ``q_n = Proj_n(z_n - mu_n / rho)`` for every UAV."""
    return project_rows(state.z - state.mu / cfg.rho, q0, r_max)


def step2_consensus(state: SwarmState, q_next, cfg: AdmmConfig, scenario: Scenario):
    """``inner_steps`` gradient-descent steps on the z-subproblem."""
    z = state.z
    for _ in range(cfg.inner_steps):
        value, grad = consensus_value_and_grad(z, q_next, state.mu, cfg.rho, scenario)
        if not np.isfinite(value):
            raise StepFailure(f"objective is not finite ({value})")
        with np.errstate(over="ignore", invalid="ignore"):
            z = z - cfg.eta * grad
        if not np.all(np.isfinite(z)):
            raise StepFailure("consensus variables became non-finite; step size too large?")
    return z


def step3_dual(state: SwarmState, q_next, z_next, rho):
    """Dual ascent ``mu_n += rho (q_n - z_n)``."""
    return state.mu + rho * (q_next - z_next)


@njit(cache=True)
def _frobenius_diff(A, B):
    s = 0.0
    for n in range(A.shape[0]):
        for i in range(3):
            d = A[n, i] - B[n, i]
            s += d * d
    return np.sqrt(s)


def residuals(q_next, z_next, mu_next, mu_prev):
    """Primal ``||Q - Z||_F`` and dual ``||M_next - M_prev||_F`` residuals."""
    return _frobenius_diff(q_next, z_next), _frobenius_diff(mu_next, mu_prev)


def augmented_lagrangian(state: SwarmState, rho, f_z):
    """``f(Z) + sum mu^T (q - z) + rho/2 ||q - z||^2`` (``q`` is feasible)."""
    diff = state.q - state.z
    return float(f_z + np.sum(state.mu * diff) + 0.5 * rho * np.sum(diff * diff))


def make_record(state: SwarmState, primal, dual, rho, scenario: Scenario):
    """Diagnostics for a completed iteration; metrics are evaluated at ``z``."""
    rate, crb_value, _, _ = objective_terms(state.z, scenario)
    report = MetricReport.from_metrics(rate, crb_value, scenario.omega)
    return IterationRecord(
        iter=state.iter,
        objective=report.objective,
        rate_nats=report.rate_nats,
        crb_m2=report.crb_m2,
        primal_residual=primal,
        dual_residual=dual,
        aug_lagrangian=augmented_lagrangian(state, rho, report.objective),
    )


def should_record(iteration, cfg: AdmmConfig, last):
    """Trace decimation rule shared by both runners."""
    return last or iteration == 1 or iteration % cfg.record_stride == 0


def converged(primal, dual, cfg: AdmmConfig):
    return primal <= cfg.eps_primal and dual <= cfg.eps_dual


def run(scenario: Scenario, cfg: AdmmConfig = AdmmConfig(), init_z=None):
    """Run consensus ADMM.

    Returns the final :class:`SwarmState` and the list of
    :class:`IterationRecord` (every iteration for runs of at most 10^4
    iterations, every 10th otherwise, plus the first and the last).

    Errors from the metric or gradient evaluation propagate with an
    ``iteration`` attribute naming the failing iteration.
    """
    q0 = scenario.initial_positions
    state = initial_state(scenario, init_z)
    trace = []
    for k in range(cfg.max_iters):
        try:
            q_next = step1_local(state, q0, cfg, scenario.r_max)
            z_next = step2_consensus(state, q_next, cfg, scenario)
            mu_next = step3_dual(state, q_next, z_next, cfg.rho)
        except SwarmIsacError as exc:
            exc.iteration = k
            raise
        primal, dual = residuals(q_next, z_next, mu_next, state.mu)
        state = SwarmState(q=q_next, z=z_next, mu=mu_next, iter=k + 1)
        done = converged(primal, dual, cfg)
        last = done or state.iter == cfg.max_iters
        if should_record(state.iter, cfg, last):
            trace.append(make_record(state, primal, dual, cfg.rho, scenario))
        if done:
            break
    return state, trace
