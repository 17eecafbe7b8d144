"""Convex nuclear-norm initialization and bi-factored gradient descent.

The estimator writes theta = u @ v.T with p x d factors and minimizes

    L_hub(u v^T) + <correction, u v^T> + (1/4) * ||u^T u - v^T v||_F^2,

where ``correction`` is the one-shot federated gradient correction (zero in
the centralized case, where the objective degenerates to the pooled loss plus
the balance term). Initialization runs a few proximal gradient steps on the
hub's nuclear-norm-regularized convex problem and rank-d factorizes the
result; with balanced symmetric factors, every iterate stays symmetric up to
rounding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import BinaryDataset, ParameterMatrix, _grad, _nll
from .spectral import FactorPair, SpectralOp, apply_spectral, factorize_rank_d

__all__ = [
    "OptimizerConfig",
    "FitResult",
    "DivergenceError",
    "default_penalty",
    "convex_init",
    "symmetric_init_from",
    "balance_gradient",
    "surrogate_gradient_theta",
    "surrogate_objective",
    "daniel_fit",
    "centralized_fit",
    "select_step_size",
]

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Raised when an iterate leaves the finite range; remembers the iteration."""

    def __init__(self, iteration: int, detail: str = ""):
        self.iteration = iteration
        super().__init__(f"iterates diverged at iteration {iteration}{detail}")


@dataclass
class OptimizerConfig:
    """Knobs shared by the factored fit, the convex init, and the baselines.

    ``lam=None`` resolves to lam_scale * sqrt(p * log(p) / n_hub) at init
    time (the leading constant of the penalty is not identifiable a priori,
    so it is a knob). The simulation regime defaults are eta=0.1,
    gamma_max=50, tol=1e-5 and five proximal init steps; large-p runs
    typically want eta=0.01, gamma_max=200.
    """

    eta: float = 0.1
    gamma_max: int = 50
    tol: float = 1e-5
    lam: float | None = None
    lam_scale: float = 1.0
    init_steps: int = 5
    ball_radius: float = math.inf
    d: int | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("step size eta must be > 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.gamma_max < 1:
            raise ValueError("gamma_max must be >= 1")
        if self.init_steps < 0:
            raise ValueError("init_steps must be >= 0")


@dataclass
class FitResult:
    """Final factors, the symmetrized estimate, and the iteration trace."""

    factors: FactorPair
    theta_hat: ParameterMatrix
    iterations_used: int
    trace: list[float] = field(default_factory=list)
    wall_time_ms: float = 0.0


def default_penalty(p: int, n_hub: int) -> float:
    """Nuclear-norm penalty sqrt(p * log(p) / n_hub) (unit leading constant)."""
    return math.sqrt(p * math.log(p) / n_hub)


def _resolve_lam(cfg: OptimizerConfig, p: int, n_hub: int) -> float:
    if cfg.lam is not None:
        return cfg.lam
    return cfg.lam_scale * default_penalty(p, n_hub)


def convex_init(hub_data: BinaryDataset, cfg: OptimizerConfig) -> ParameterMatrix:
    """Proximal gradient steps on the hub's nuclear-norm problem, from zero.

    Each step is a gradient update followed by singular-value soft
    thresholding at eta * lam, then (if configured finite) a rescale back
    onto the Frobenius ball. The result is full-rank; callers reduce it with
    :func:`symmetric_init_from`.
    """
    p = hub_data.p
    lam = _resolve_lam(cfg, p, hub_data.n)
    spins = hub_data.spins
    m = np.zeros((p, p))
    for step in range(1, cfg.init_steps + 1):
        m = m - cfg.eta * _grad(m, spins)
        if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > DIVERGENCE_LIMIT:
            raise DivergenceError(step, " during initialization")
        m = apply_spectral(m, SpectralOp.soft(cfg.eta * lam))
        if math.isfinite(cfg.ball_radius):
            norm = float(np.linalg.norm(m))
            if norm > cfg.ball_radius:
                m = m * (cfg.ball_radius / norm)
    return ParameterMatrix(m)


def symmetric_init_from(theta0_full: ParameterMatrix, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (u0, v0) from the rank-d factorization of the init matrix."""
    pair, _ = factorize_rank_d(theta0_full, d)
    return pair.u, pair.v


def balance_gradient(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of (1/4) * ||u^T u - v^T v||_F^2: (u @ pi, -v @ pi)."""
    if u.shape != v.shape:
        raise ValueError("factor shapes must match")
    pi = u.T @ u - v.T @ v
    return u @ pi, -(v @ pi)


def surrogate_gradient_theta(
    theta: ParameterMatrix, hub_data: BinaryDataset, correction: np.ndarray
) -> np.ndarray:
    """Gradient of the corrected hub loss at theta: hub gradient + correction."""
    correction = np.asarray(correction, dtype=np.float64)
    if correction.shape != (theta.p, theta.p):
        raise ValueError(
            f"correction shape {correction.shape} does not match p={theta.p}"
        )
    return _grad(theta.values, hub_data.spins) + correction


def surrogate_objective(
    u: np.ndarray, v: np.ndarray, hub_data: BinaryDataset, correction: np.ndarray
) -> float:
    """Corrected hub loss plus balance term, evaluated at (u, v)."""
    theta = u @ v.T
    theta = 0.5 * (theta + theta.T)
    pi = u.T @ u - v.T @ v
    return (
        _nll(theta, hub_data.spins)
        + float(np.sum(correction * theta))
        + 0.25 * float(np.sum(pi * pi))
    )


def _check_finite(u: np.ndarray, v: np.ndarray, iteration: int) -> None:
    bad = not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)))
    if bad or max(np.max(np.abs(u)), np.max(np.abs(v))) > DIVERGENCE_LIMIT:
        raise DivergenceError(iteration)


def daniel_fit(
    hub_data: BinaryDataset,
    correction: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    cfg: OptimizerConfig,
) -> FitResult:
    """Gradient descent on the corrected bi-factored objective.

    Per iteration, with both factor updates reading only the previous
    iterates:

        grad  = hub_gradient(sym(u v^T)) + correction
        u_new = u - eta * (grad   @ v + u @ pi)
        v_new = v - eta * (grad.T @ u - v @ pi)

    Stops when ||u_new v_new^T - u v^T||_F < tol or after gamma_max
    iterations. Raises :class:`DivergenceError` if an iterate blows up.
    """
    correction = np.asarray(correction, dtype=np.float64)
    p = hub_data.p
    if u0.shape != v0.shape or u0.shape[0] != p:
        raise ValueError("u0/v0 must be p x d with p matching the hub data")
    if correction.shape != (p, p):
        raise ValueError("correction must be p x p")
    start = time.perf_counter()
    spins = hub_data.spins
    u, v = u0.copy(), v0.copy()
    theta_prev = u @ v.T
    trace: list[float] = []
    iterations = 0
    for gamma in range(1, cfg.gamma_max + 1):
        grad = _grad(0.5 * (theta_prev + theta_prev.T), spins) + correction
        bu, bv = balance_gradient(u, v)
        u_new = u - cfg.eta * (grad @ v + bu)
        v_new = v - cfg.eta * (grad.T @ u + bv)
        _check_finite(u_new, v_new, gamma)
        theta_new = u_new @ v_new.T
        delta = float(np.linalg.norm(theta_new - theta_prev))
        trace.append(delta)
        u, v, theta_prev = u_new, v_new, theta_new
        iterations = gamma
        if delta < cfg.tol:
            break
    wall = (time.perf_counter() - start) * 1e3
    return FitResult(
        factors=FactorPair(u=u, v=v),
        theta_hat=ParameterMatrix(theta_prev),
        iterations_used=iterations,
        trace=trace,
        wall_time_ms=wall,
    )


def centralized_fit(
    data: BinaryDataset, u0: np.ndarray, v0: np.ndarray, cfg: OptimizerConfig
) -> FitResult:
    """Single-site comparator: the same descent with a zero correction."""
    return daniel_fit(data, np.zeros((data.p, data.p)), u0, v0, cfg)


def select_step_size(
    hub_data: BinaryDataset,
    correction: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    cfg: OptimizerConfig,
    candidates: tuple[float, ...] = (0.1, 0.2, 0.3),
) -> float:
    """Grid-search helper: candidate step size with the lowest final objective.

    Divergent candidates are skipped; ties resolve to the smaller step.
    """
    best_eta, best_obj = None, math.inf
    for eta in candidates:
        trial = OptimizerConfig(
            eta=eta,
            gamma_max=cfg.gamma_max,
            tol=cfg.tol,
            lam=cfg.lam,
            lam_scale=cfg.lam_scale,
            init_steps=cfg.init_steps,
            ball_radius=cfg.ball_radius,
            d=cfg.d,
        )
        try:
            result = daniel_fit(hub_data, correction, u0, v0, trial)
        except DivergenceError:
            continue
        obj = surrogate_objective(result.factors.u, result.factors.v, hub_data, correction)
        if obj < best_obj:
            best_eta, best_obj = eta, obj
    if best_eta is None:
        raise DivergenceError(0, " for every candidate step size")
    return best_eta
