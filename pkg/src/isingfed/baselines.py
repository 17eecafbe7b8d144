"""Convex comparison methods: gradient step + spectral projection per iteration.

Four variants share one loop: soft or hard singular-value thresholding,
top-d truncation, and the PSD projection. Each runs from the zero matrix
with the same stopping rule as the factored fit, in either centralized mode
(pooled gradient) or surrogate mode (hub gradient plus the one-shot
correction; the two coincide when the correction is zero).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .kernels import BinaryDataset, ParameterMatrix, _grad
from .optimize import DIVERGENCE_LIMIT, DivergenceError, FitResult, OptimizerConfig
from .spectral import SpectralOp, apply_spectral, factorize_rank_d

__all__ = ["BaselineMethod", "GradientSource", "baseline_step", "baseline_fit"]

SIM_THRESHOLD = 1e-3  # singular-value threshold for the simulation regime
EHR_THRESHOLD = 1e-4  # large-p regime


@dataclass(frozen=True)
class BaselineMethod:
    """kind in {sv_soft, sv_hard, sv_topd, psd_cvx}; tau/d as applicable."""

    kind: str
    tau: float = SIM_THRESHOLD
    d: int = 0

    def __post_init__(self):
        if self.kind not in ("sv_soft", "sv_hard", "sv_topd", "psd_cvx"):
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.kind == "sv_topd" and self.d < 1:
            raise ValueError("sv_topd needs d >= 1")

    @classmethod
    def sv_soft(cls, tau: float = SIM_THRESHOLD) -> "BaselineMethod":
        return cls("sv_soft", tau=tau)

    @classmethod
    def sv_hard(cls, tau: float = SIM_THRESHOLD) -> "BaselineMethod":
        return cls("sv_hard", tau=tau)

    @classmethod
    def sv_topd(cls, d: int) -> "BaselineMethod":
        return cls("sv_topd", d=d)

    @classmethod
    def psd_cvx(cls) -> "BaselineMethod":
        return cls("psd_cvx")

    def spectral_op(self) -> SpectralOp:
        if self.kind == "sv_soft":
            return SpectralOp.soft(self.tau)
        if self.kind == "sv_hard":
            return SpectralOp.hard(self.tau)
        if self.kind == "sv_topd":
            return SpectralOp.top_d(self.d)
        return SpectralOp.psd()


@dataclass(frozen=True)
class GradientSource:
    """Where the loss gradient comes from: pooled data, or hub data + correction."""

    data: BinaryDataset
    correction: np.ndarray | None = None

    def __post_init__(self):
        if self.correction is not None:
            c = np.asarray(self.correction, dtype=np.float64)
            if c.shape != (self.data.p, self.data.p):
                raise ValueError("correction shape must be p x p")
            object.__setattr__(self, "correction", c)

    @classmethod
    def centralized(cls, full_data: BinaryDataset) -> "GradientSource":
        return cls(data=full_data)

    @classmethod
    def surrogate(cls, hub_data: BinaryDataset, correction: np.ndarray) -> "GradientSource":
        return cls(data=hub_data, correction=correction)

    @property
    def p(self) -> int:
        return self.data.p

    def gradient(self, theta_values: np.ndarray) -> np.ndarray:
        g = _grad(theta_values, self.data.spins)
        if self.correction is not None:
            g = g + self.correction
        return g


def baseline_step(
    theta_prev: ParameterMatrix, src: GradientSource, method: BaselineMethod, eta: float
) -> ParameterMatrix:
    """One gradient step followed by the method's spectral projection."""
    if theta_prev.p != src.p:
        raise ValueError("theta and gradient source dimensions differ")
    stepped = theta_prev.values - eta * src.gradient(theta_prev.values)
    return ParameterMatrix(apply_spectral(stepped, method.spectral_op()))


def baseline_fit(
    src: GradientSource, method: BaselineMethod, cfg: OptimizerConfig
) -> FitResult:
    """Iterate baseline_step from the zero matrix under the shared stopping rule."""
    if cfg.d is None:
        raise ValueError("cfg.d is required to factorize the final estimate")
    start = time.perf_counter()
    theta = ParameterMatrix.zeros(src.p)
    trace: list[float] = []
    iterations = 0
    for gamma in range(1, cfg.gamma_max + 1):
        theta_new = baseline_step(theta, src, method, cfg.eta)
        if np.max(np.abs(theta_new.values)) > DIVERGENCE_LIMIT:
            raise DivergenceError(gamma)
        delta = float(np.linalg.norm(theta_new.values - theta.values))
        trace.append(delta)
        theta = theta_new
        iterations = gamma
        if delta < cfg.tol:
            break
    factors, _ = factorize_rank_d(theta, cfg.d)
    wall = (time.perf_counter() - start) * 1e3
    return FitResult(
        factors=factors,
        theta_hat=theta,
        iterations_used=iterations,
        trace=trace,
        wall_time_ms=wall,
    )
