"""Pseudo-likelihood kernels for the pairwise binary (Ising) model.

A configuration is a vector x in {-1,+1}^p. The model is parameterized by a
symmetric p x p coupling matrix Theta: off-diagonal entries are pairwise
interactions, diagonal entries are per-feature occurrence tendencies. The
conditional distribution of one coordinate given the rest is logistic in the
local field

    Q_q(Theta, x) = 2*theta_qq*x_q + 2*sum_{j != q} theta_jq*x_q*x_j,

and the pseudo negative log-likelihood of a dataset is the average over
samples and coordinates of softplus(-Q). All kernels are pure functions over
read-only inputs and are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import expit

__all__ = [
    "ParameterMatrix",
    "BinaryDataset",
    "local_field",
    "conditional_prob",
    "pseudo_nll",
    "per_sample_grad",
    "pseudo_nll_grad",
]


@dataclass(frozen=True)
class ParameterMatrix:
    """Symmetric coupling matrix; symmetrized as (M + M.T)/2 on construction."""

    values: np.ndarray

    def __post_init__(self):
        m = np.array(self.values, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"coupling matrix must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("coupling matrix entries must be finite")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "values", m)

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, p: int) -> "ParameterMatrix":
        return cls(np.zeros((p, p)))


@dataclass(frozen=True)
class BinaryDataset:
    """n samples of p entries in {-1,+1}, stored as int8 rows."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values)
        if v.ndim != 2:
            raise ValueError(f"dataset must be 2-D (n, p), got shape {v.shape}")
        if v.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if not np.all(np.abs(v) == 1):
            raise ValueError("dataset entries must be exactly -1 or +1")
        v = v.astype(np.int8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, indices) -> "BinaryDataset":
        return BinaryDataset(self.values[np.asarray(indices)])

    @cached_property
    def spins(self) -> np.ndarray:
        """Float64 view of the samples, cached for reuse in gradient loops."""
        x = self.values.astype(np.float64)
        x.setflags(write=False)
        return x


def _as_sample(x, p: int) -> np.ndarray:
    v = np.asarray(x)
    if v.shape != (p,):
        raise ValueError(f"sample must have shape ({p},), got {v.shape}")
    if not np.all(np.abs(v) == 1):
        raise ValueError("sample entries must be exactly -1 or +1")
    return v.astype(np.float64)


def _check_dims(theta: ParameterMatrix, data: BinaryDataset) -> None:
    if theta.p != data.p:
        raise ValueError(f"dimension mismatch: theta p={theta.p}, data p={data.p}")


def _fields(theta_values: np.ndarray, spins: np.ndarray) -> np.ndarray:
    """Local fields Q for every (sample, coordinate), shape (n, p).

    Q[l, q] = 2*x_q*((X @ Theta)[l, q] + theta_qq) - 2*theta_qq, which equals
    the per-coordinate field above because x_q^2 = 1. Built in place on the
    matmul output; this sits on the hot path of every fit.
    """
    diag = np.diag(theta_values)
    q = spins @ theta_values
    q += diag
    q *= spins
    q -= diag
    q *= 2.0
    return q


def _softplus(q: np.ndarray) -> np.ndarray:
    # max(q,0) + log1p(exp(-|q|)): stable for |q| into the hundreds
    return np.maximum(q, 0.0) + np.log1p(np.exp(-np.abs(q)))


def _nll(theta_values: np.ndarray, spins: np.ndarray) -> float:
    q = _fields(theta_values, spins)
    return float(np.mean(np.sum(_softplus(-q), axis=1)))


def _grad(theta_values: np.ndarray, spins: np.ndarray) -> np.ndarray:
    """Mean per-sample gradient, shape (p, p); always exactly symmetric."""
    n = spins.shape[0]
    q = _fields(theta_values, spins)
    np.negative(q, out=q)
    expit(q, out=q)  # now -B, entrywise in (0, 1)
    q *= spins  # now -C with C[l, i] = x_i * B_i
    cross = q.T @ spins
    g = cross + cross.T
    g *= -2.0 / n
    np.fill_diagonal(g, (-2.0 / n) * np.sum(q, axis=0))
    return g


def local_field(theta: ParameterMatrix, x, q: int) -> float:
    """Field Q_q(Theta, x) seen by coordinate q (0-based index)."""
    v = _as_sample(x, theta.p)
    if not 0 <= q < theta.p:
        raise IndexError(f"feature index {q} out of range for p={theta.p}")
    t = theta.values
    s = float(t[:, q] @ v)
    return 2.0 * v[q] * s + 2.0 * t[q, q] * (v[q] - 1.0)


def conditional_prob(theta: ParameterMatrix, x, j: int) -> float:
    """P(X_j = x_j | X_{-j} = x_{-j}) = sigmoid(Q_j); stable for |Q| <= ~700."""
    return float(expit(local_field(theta, x, j)))


def pseudo_nll(theta: ParameterMatrix, data: BinaryDataset) -> float:
    """Average negative conditional log-likelihood over samples and coordinates.

    Equals p*log(2) at Theta = 0. Normalization is by the size of the dataset
    handed in, so the same function serves pooled and per-site losses.
    """
    _check_dims(theta, data)
    return _nll(theta.values, data.spins)


def per_sample_grad(theta: ParameterMatrix, x) -> np.ndarray:
    """Closed-form gradient contribution W of a single sample.

    With B_q = -1/(1 + exp(Q_q)): W_ij = 2*x_i*x_j*(B_i + B_j) off the
    diagonal and W_ii = 2*x_i*B_i, symmetric by construction. Entry (i, j)
    is the derivative along the symmetric perturbation e_i e_j^T + e_j e_i^T.
    """
    v = _as_sample(x, theta.p)
    q = _fields(theta.values, v[None, :])[0]
    b = -expit(-q)
    w = 2.0 * np.outer(v, v) * (b[:, None] + b[None, :])
    np.fill_diagonal(w, 2.0 * v * b)
    return w


def pseudo_nll_grad(theta: ParameterMatrix, data: BinaryDataset) -> np.ndarray:
    """Arithmetic mean of per_sample_grad over the dataset."""
    _check_dims(theta, data)
    return _grad(theta.values, data.spins)
