"""Error metrics and downstream scoring primitives for fitted models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .kernels import ParameterMatrix, conditional_prob

__all__ = [
    "LabeledScores",
    "EdgeList",
    "frob_error",
    "auc",
    "pair_scores",
    "phenotype_score",
    "embed",
    "kg_edges",
    "write_edges_csv",
]


@dataclass(frozen=True)
class LabeledScores:
    """Scores with binary labels; needs at least one positive and one negative."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.shape != y.shape or s.ndim != 1:
            raise ValueError("scores and labels must be equal-length vectors")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        if y.sum() == 0 or y.sum() == len(y):
            raise ValueError("need at least one positive and one negative label")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int8))


@dataclass(frozen=True)
class EdgeList:
    """Thresholded off-diagonal pairs (j, k, weight) with j < k, no duplicates."""

    edges: tuple
    threshold: float


def frob_error(theta_hat, theta_star) -> float:
    """Frobenius distance between an estimate and the truth."""
    a = theta_hat.values if isinstance(theta_hat, ParameterMatrix) else np.asarray(theta_hat)
    b = theta_star.values if isinstance(theta_star, ParameterMatrix) else np.asarray(theta_star)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def auc(ls: LabeledScores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 0.5."""
    ranks = rankdata(ls.scores)  # average ranks implement the 0.5 tie rule
    pos = ls.labels == 1
    n_pos = int(pos.sum())
    n_neg = len(ls.labels) - n_pos
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pair_scores(theta_hat: ParameterMatrix, pairs) -> list[float]:
    """Estimated coupling theta[j, k] for each off-diagonal index pair."""
    out = []
    p = theta_hat.p
    for j, k in pairs:
        if j == k:
            raise ValueError(f"pair ({j}, {k}) is diagonal")
        if not (0 <= j < p and 0 <= k < p):
            raise IndexError(f"pair ({j}, {k}) out of range for p={p}")
        out.append(float(theta_hat.values[j, k]))
    return out


def phenotype_score(theta_hat: ParameterMatrix, x, j: int) -> float:
    """P(X_j = +1 | the other coordinates of x), under the fitted model."""
    forced = np.array(x, dtype=np.int8)
    forced[j] = 1
    return conditional_prob(theta_hat, forced, j)


def embed(u_hat: np.ndarray, x) -> np.ndarray:
    """Project one sample onto the factor columns: u_hat.T @ x."""
    u = np.asarray(u_hat, dtype=np.float64)
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (u.shape[0],):
        raise ValueError(f"sample length {v.shape} does not match factor rows {u.shape[0]}")
    return u.T @ v


def kg_edges(theta_hat: ParameterMatrix, quantile: float) -> EdgeList:
    """Edges whose coupling reaches the nearest-rank quantile of the upper triangle."""
    if not 0.0 < quantile < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    p = theta_hat.p
    if p < 2:
        raise ValueError("need p >= 2 for edges")
    rows, cols = np.triu_indices(p, k=1)
    values = theta_hat.values[rows, cols]
    sorted_values = np.sort(values)
    rank = math.ceil(quantile * len(values))  # nearest-rank: ceil(q * M), 1-based
    threshold = float(sorted_values[rank - 1])
    keep = values >= threshold
    edges = tuple(
        (int(j), int(k), float(w)) for j, k, w in zip(rows[keep], cols[keep], values[keep])
    )
    return EdgeList(edges=edges, threshold=threshold)


def write_edges_csv(path, edge_list: EdgeList) -> None:
    """Export edges for external graph tooling."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("source,target,weight\n")
        for j, k, w in edge_list.edges:
            fh.write(f"{j},{k},{w!r}\n")
