"""Ground-truth generation and sampling for the pairwise binary model.

The joint mass of a configuration x is proportional to

    exp( sum_{j<k} theta_jk x_j x_k + sum_j theta_jj x_j ),

with each unordered pair counted once so that the induced conditionals are
exactly sigmoid(Q_j) with the local field of :mod:`isingfed.kernels`. Small
models (p <= 12) can be enumerated exactly; larger ones are sampled by
independent-chain Gibbs. All randomness flows through counter-based Philox
streams keyed by the caller's seed, so outputs are bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from .kernels import BinaryDataset, ParameterMatrix

__all__ = [
    "GroundTruth",
    "ExactTable",
    "make_ground_truth",
    "exact_table",
    "gibbs_sample",
    "exact_sample",
    "write_dataset_text",
    "write_dataset_binary",
    "load_dataset",
]

MAX_EXACT_P = 12  # 2**12 = 4096 table entries


@dataclass(frozen=True)
class GroundTruth:
    """Rank-d truth: factor u_star (p x d) and theta_star = u_star @ u_star.T."""

    u_star: np.ndarray
    theta_star: ParameterMatrix
    seed: int


@dataclass(frozen=True)
class ExactTable:
    """Exact joint over all 2**p configurations; bit b set <=> x_b = +1."""

    p: int
    probs: np.ndarray


def _philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & (2**64 - 1)))


def make_ground_truth(p: int, d: int, seed: int) -> GroundTruth:
    """Draw u_star with i.i.d. N(0, 1/(d*p)) entries; theta_star = u u^T."""
    if not 1 <= d <= p:
        raise ValueError(f"rank d={d} must satisfy 1 <= d <= p={p}")
    rng = _philox(seed)
    u = rng.standard_normal((p, d)) / np.sqrt(d * p)
    u.setflags(write=False)
    return GroundTruth(u_star=u, theta_star=ParameterMatrix(u @ u.T), seed=seed)


def _all_states(p: int) -> np.ndarray:
    idx = np.arange(2**p, dtype=np.uint32)
    bits = (idx[:, None] >> np.arange(p, dtype=np.uint32)[None, :]) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


def exact_table(theta: ParameterMatrix) -> ExactTable:
    """Enumerate the normalized joint mass of every configuration (p <= 12)."""
    p = theta.p
    if p > MAX_EXACT_P:
        raise ValueError(f"exact enumeration refused for p={p} > {MAX_EXACT_P}")
    x = _all_states(p)
    t = theta.values
    quad = np.einsum("ij,jk,ik->i", x, t, x)
    # sum_{j<k} theta_jk x_j x_k = (x Theta x^T - tr(Theta)) / 2 since x_j^2 = 1
    logmass = 0.5 * (quad - np.trace(t)) + x @ np.diag(t)
    probs = np.exp(logmass - logsumexp(logmass))
    probs /= probs.sum()
    probs.setflags(write=False)
    return ExactTable(p=p, probs=probs)


def _states_from_indices(idx: np.ndarray, p: int) -> np.ndarray:
    bits = (idx[:, None] >> np.arange(p, dtype=np.uint32)[None, :]) & 1
    return (bits.astype(np.int8) * 2 - 1).astype(np.int8)


def exact_sample(table: ExactTable, n: int, seed: int) -> BinaryDataset:
    """i.i.d. draws from an exact table by inverse CDF over configurations."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = _philox(seed)
    cdf = np.cumsum(table.probs)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right").astype(np.uint32)
    return BinaryDataset(_states_from_indices(idx, table.p))


def gibbs_sample(
    theta: ParameterMatrix,
    n: int,
    burn_in_sweeps: int,
    seed: int,
    factors: np.ndarray | None = None,
) -> BinaryDataset:
    """Draw n independent samples via one Gibbs chain per sample.

    Every chain starts from a uniform random +-1 state and runs
    ``burn_in_sweeps`` systematic sweeps, resampling coordinate j from its
    logistic conditional. Chains execute in lockstep over a shared
    (sweep, coordinate) schedule; chain l consumes lane l of the Philox
    stream block drawn for that schedule position, so streams never overlap
    and the output is reproducible bit-for-bit.

    Parameters
    ----------
    factors : optional (p, d) array with theta = factors @ factors.T.
        Enables O(n*d) instead of O(n*p) work per coordinate update. The
        sampled distribution is identical either way.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if burn_in_sweeps < 1:
        raise ValueError("need burn_in_sweeps >= 1")
    p = theta.p
    t = theta.values
    diag = np.diag(t).copy()
    rng = _philox(seed)

    state = (rng.integers(0, 2, size=(n, p)) * 2 - 1).astype(np.float64)
    if factors is not None:
        u = np.asarray(factors, dtype=np.float64)
        if u.shape[0] != p:
            raise ValueError("factors row count must equal p")
        if not np.allclose(u @ u.T, t, atol=1e-12):
            raise ValueError("factors do not reproduce theta")
        g = state @ u  # (n, d) running factor fields
    else:
        f = state @ t  # (n, p) running fields, f[:, j] = sum_k theta_kj x_k

    for _ in range(burn_in_sweeps):
        uniforms = rng.random((p, n))
        for j in range(p):
            fj = g @ u[j] if factors is not None else f[:, j]
            h = fj - diag[j] * state[:, j]
            prob_plus = expit(2.0 * diag[j] + 2.0 * h)
            new = np.where(uniforms[j] < prob_plus, 1.0, -1.0)
            delta = new - state[:, j]
            flipped = np.nonzero(delta)[0]
            if flipped.size:
                state[flipped, j] = new[flipped]
                if factors is not None:
                    g[flipped] += delta[flipped, None] * u[j]
                else:
                    f[flipped] += delta[flipped, None] * t[j]
    return BinaryDataset(state.astype(np.int8))


# ---------------------------------------------------------------------------
# Dataset files: a text format for eyeballing and a compact binary format.
# Text:   header "ISING-DATA v1 p=<p> n=<n>", then n lines of +-1 entries.
# Binary: magic "ISD1", u32 p, u64 n (little-endian), then n*p signed bytes.
# ---------------------------------------------------------------------------

_TEXT_MAGIC = "ISING-DATA v1"
_BIN_MAGIC = b"ISD1"


def write_dataset_text(path, data: BinaryDataset) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{_TEXT_MAGIC} p={data.p} n={data.n}\n")
        for row in data.values:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def write_dataset_binary(path, data: BinaryDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<IQ", data.p, data.n))
        fh.write(data.values.astype("<i1").tobytes())


def load_dataset(path) -> BinaryDataset:
    """Load either dataset format, sniffing the leading magic bytes."""
    raw = Path(path).read_bytes()
    if raw[:4] == _BIN_MAGIC:
        if len(raw) < 16:
            raise ValueError("truncated binary dataset header")
        p, n = struct.unpack_from("<IQ", raw, 4)
        body = raw[16:]
        if len(body) != n * p:
            raise ValueError("binary dataset payload length mismatch")
        values = np.frombuffer(body, dtype="<i1").reshape(n, p)
        return BinaryDataset(values)
    text = raw.decode("ascii")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_TEXT_MAGIC):
        raise ValueError("unrecognized dataset file")
    fields = dict(tok.split("=") for tok in lines[0].split()[2:])
    p, n = int(fields["p"]), int(fields["n"])
    rows = [line.split() for line in lines[1 : n + 1]]
    if len(rows) != n:
        raise ValueError("text dataset row count mismatch")
    values = np.array(rows, dtype=np.int64)
    if values.shape != (n, p):
        raise ValueError("text dataset shape mismatch")
    return BinaryDataset(values)
