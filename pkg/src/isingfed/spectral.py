"""Spectral projection operators, rank-d factorization, and subspace distance.

All inputs here are (nearly) symmetric, so every operator is implemented via
an eigendecomposition of the symmetrized matrix. Thresholding acts on the
eigenvalue magnitudes with the sign restored afterwards, which coincides with
the singular-value semantics because sigma = |lambda| for symmetric matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import ParameterMatrix

__all__ = [
    "SpectralOp",
    "FactorPair",
    "apply_spectral",
    "factorize_rank_d",
    "procrustes_distance",
    "operator_norm",
]


@dataclass(frozen=True)
class SpectralOp:
    """One of: soft / hard magnitude thresholding, top-d truncation, PSD clamp."""

    kind: str
    tau: float = 0.0
    d: int = 0

    def __post_init__(self):
        if self.kind not in ("soft", "hard", "topd", "psd"):
            raise ValueError(f"unknown spectral op kind {self.kind!r}")
        if self.kind in ("soft", "hard") and self.tau < 0:
            raise ValueError("threshold tau must be >= 0")
        if self.kind == "topd" and self.d < 1:
            raise ValueError("topd needs d >= 1")

    @classmethod
    def soft(cls, tau: float) -> "SpectralOp":
        return cls("soft", tau=tau)

    @classmethod
    def hard(cls, tau: float) -> "SpectralOp":
        return cls("hard", tau=tau)

    @classmethod
    def top_d(cls, d: int) -> "SpectralOp":
        return cls("topd", d=d)

    @classmethod
    def psd(cls) -> "SpectralOp":
        return cls("psd")


@dataclass(frozen=True)
class FactorPair:
    """Factor pair (u, v), each p x d, representing theta = u @ v.T."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must have identical shape")

    def product(self) -> np.ndarray:
        return self.u @ self.v.T

    def stacked(self) -> np.ndarray:
        """The (2p) x d matrix [u; v] used by the subspace distance."""
        return np.vstack([self.u, self.v])


def _matrix_of(m) -> np.ndarray:
    v = m.values if isinstance(m, ParameterMatrix) else np.asarray(m, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("matrix entries must be finite")
    return v


def _eig_sym(m: np.ndarray):
    w, vecs = np.linalg.eigh(0.5 * (m + m.T))
    # deterministic eigenvector sign: largest-|entry| component positive
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        lead = np.argmax(np.abs(col))
        if col[lead] < 0:
            vecs[:, k] = -col
    return w, vecs


def apply_spectral(m, op: SpectralOp) -> np.ndarray:
    """Apply a spectral operator and reconstruct; preserves symmetry exactly."""
    w, vecs = _eig_sym(_matrix_of(m))
    if op.kind == "soft":
        w = np.sign(w) * np.maximum(np.abs(w) - op.tau, 0.0)
    elif op.kind == "hard":
        w = np.where(np.abs(w) > op.tau, w, 0.0)  # strict inequality: sigma == tau drops
    elif op.kind == "topd":
        order = np.argsort(-np.abs(w), kind="stable")
        w = w.copy()
        w[order[op.d :]] = 0.0
    else:  # psd
        w = np.maximum(w, 0.0)
    out = (vecs * w) @ vecs.T
    return 0.5 * (out + out.T)


def factorize_rank_d(theta0, d: int):
    """Balanced rank-d factorization of a symmetric matrix.

    Keeps the d eigenpairs of largest magnitude: u columns are
    eigenvector * sqrt(|lambda|), v = u @ diag(sign lambda) with sign(0) = +1,
    so u @ v.T is the best rank-d symmetric approximation and
    u.T @ u == v.T @ v (balanced factors).

    Returns
    -------
    (FactorPair, d0) where d0 is the length-d vector of eigenvalue signs.
    """
    m = _matrix_of(theta0)
    p = m.shape[0]
    if not 1 <= d <= p:
        raise ValueError(f"rank d={d} must satisfy 1 <= d <= p={p}")
    if not np.allclose(m, m.T, atol=1e-8):
        raise ValueError("factorize_rank_d requires a symmetric matrix")
    w, vecs = _eig_sym(m)
    order = np.argsort(-np.abs(w), kind="stable")[:d]
    lam = w[order]
    signs = np.where(lam < 0, -1.0, 1.0)
    u = vecs[:, order] * np.sqrt(np.abs(lam))
    v = u * signs
    return FactorPair(u=u, v=v), signs


def procrustes_distance(z1: np.ndarray, z2: np.ndarray) -> float:
    """Squared distance ||z1 - z2 @ O*||_F^2 minimized over orthogonal O.

    O* comes from the SVD of z2.T @ z1 = A S B^T as O* = A @ B^T. Apply to
    stacked factor matrices [u; v] to compare factor pairs up to rotation.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch: {z1.shape} vs {z2.shape}")
    a, _, bt = np.linalg.svd(z2.T @ z1)
    o = a @ bt
    diff = z1 - z2 @ o
    return float(np.sum(diff * diff))


def operator_norm(m) -> float:
    """Largest singular value."""
    v = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("matrix entries must be finite")
    return float(np.linalg.svd(v, compute_uv=False)[0])
