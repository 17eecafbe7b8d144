"""Experiment configuration, deterministic grid execution, and CSV output.

A grid cell is (p, d, n, x, method, rep). Every cell derives its own 64-bit
seed from the base seed and the cell coordinates, so reruns reproduce every
number except wall time, and distinct cells never share a PRNG stream. The
per-cell pipeline is: draw a rank-d ground truth, Gibbs-sample n spins, split
across m = floor(n**x) sites, convex-init on the hub block, run the one-shot
gradient round, fit with the requested method, and score against the truth.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import BaselineMethod, GradientSource, baseline_fit
from .federation import InProcessTransport, Partition, make_partition, partition_into, run_round
from .kernels import BinaryDataset, ParameterMatrix
from .metrics import frob_error
from .optimize import (
    DivergenceError,
    FitResult,
    OptimizerConfig,
    convex_init,
    daniel_fit,
    symmetric_init_from,
)
from .sampling import GroundTruth, gibbs_sample, make_ground_truth
from .spectral import procrustes_distance

__all__ = [
    "METHODS",
    "canonical_method",
    "ExperimentConfig",
    "ResultRow",
    "CSV_HEADER",
    "cell_seed",
    "derive_seed",
    "simulate_cell_data",
    "run_pipeline",
    "PipelineResult",
    "run_cell",
    "run_grid",
    "write_rows_csv",
    "read_rows_csv",
    "parse_config",
    "format_config",
    "load_config",
    "save_config",
    "write_theta",
    "read_theta",
]

METHODS = ("DANIEL", "SvSoft", "SvHard", "SvTopd", "PsdCvx")
CSV_HEADER = "method,p,d,n,x,m,rep,frob_err,subspace_err,iterations,wall_time_ms,seed"
THETA_MAGIC = b"DTH1"

_BASELINE_KINDS = {
    "SvSoft": "sv_soft",
    "SvHard": "sv_hard",
    "SvTopd": "sv_topd",
    "PsdCvx": "psd_cvx",
}


def canonical_method(name: str) -> str:
    key = name.replace("-", "").replace("_", "").lower()
    for token in METHODS:
        if token.lower() == key:
            return token
    raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")


@dataclass
class ExperimentConfig:
    """One simulation grid: value lists plus shared optimizer settings."""

    p_list: list[int] = field(default_factory=lambda: [50])
    n_list: list[int] = field(default_factory=lambda: [1000])
    x_list: list[float] = field(default_factory=lambda: [0.0])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    reps: int = 200
    base_seed: int = 0
    d: int | None = None
    d_ratio: float = 0.1
    burn_in: int = 200
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sv_soft_threshold: float | None = None
    sv_hard_threshold: float | None = None
    output_path: str = "results.csv"

    def __post_init__(self):
        if not self.p_list or not self.n_list or not self.x_list:
            raise ValueError("p_list, n_list, and x_list must be non-empty")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        self.methods = [canonical_method(m) for m in self.methods]
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        for x in self.x_list:
            if not 0.0 <= x <= 1.0:
                raise ValueError(f"distributedness x={x} must lie in [0, 1]")
        if self.burn_in < 1:
            raise ValueError("burn_in must be >= 1")
        if self.d is None and self.d_ratio <= 0:
            raise ValueError("need an explicit d or a positive d_ratio")

    def rank_for(self, p: int) -> int:
        if self.d is not None:
            return self.d
        return max(1, round(p * self.d_ratio))


@dataclass
class ResultRow:
    """One grid-cell outcome; ``error`` and ``sym_drift`` stay out of the CSV."""

    method: str
    p: int
    d: int
    n: int
    x: float
    m: int
    rep: int
    frob_err: float
    subspace_err: float
    iterations: int
    wall_time_ms: float
    seed: int
    error: str | None = None
    sym_drift: float = 0.0


def cell_seed(base_seed: int, p: int, n: int, x: float, method: str, rep: int) -> int:
    """64-bit cell seed hashed from the base seed and the cell coordinates."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<QQQd", base_seed & 2**64 - 1, p, n, x))
    h.update(method.encode("ascii"))
    h.update(struct.pack("<Q", rep))
    return int.from_bytes(h.digest(), "little")


def derive_seed(seed: int, label: str) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", seed & 2**64 - 1))
    h.update(label.encode("ascii"))
    return int.from_bytes(h.digest(), "little")


def simulate_cell_data(
    p: int, d: int, n: int, seed: int, burn_in: int
) -> tuple[GroundTruth, BinaryDataset]:
    """Ground truth plus a Gibbs-sampled dataset, both derived from one seed."""
    truth = make_ground_truth(p, d, derive_seed(seed, "truth"))
    data = gibbs_sample(
        truth.theta_star, n, burn_in, derive_seed(seed, "data"), factors=truth.u_star
    )
    return truth, data


@dataclass
class PipelineResult:
    fit: FitResult
    partition: Partition
    correction: np.ndarray
    hub_data: BinaryDataset
    wall_time_ms: float


def _baseline_for(
    method: str,
    d: int,
    sv_soft_threshold: float | None,
    sv_hard_threshold: float | None,
) -> BaselineMethod:
    kind = _BASELINE_KINDS[method]
    if kind == "sv_topd":
        return BaselineMethod.sv_topd(d)
    if kind == "sv_soft" and sv_soft_threshold is not None:
        return BaselineMethod.sv_soft(sv_soft_threshold)
    if kind == "sv_hard" and sv_hard_threshold is not None:
        return BaselineMethod.sv_hard(sv_hard_threshold)
    return BaselineMethod(kind=kind)


def run_pipeline(
    data: BinaryDataset,
    d: int,
    m: int,
    method: str,
    opt: OptimizerConfig,
    transport=None,
    sv_soft_threshold: float | None = None,
    sv_hard_threshold: float | None = None,
) -> PipelineResult:
    """Partition, initialize, run the one-shot round, and fit one method.

    The timed span covers exactly the work the method needs: the factored fit
    always pays for its convex init; baselines pay for init and the round only
    when m > 1 (with m = 1 the correction is identically zero and they start
    from the zero matrix with no init at all).
    """
    method = canonical_method(method)
    part = partition_into(data.n, m)
    hub_data = data.subset(part.block(1))
    opt = replace(opt, d=d)
    start = time.perf_counter()
    needs_round = part.m > 1
    u0 = v0 = None
    if method == "DANIEL" or needs_round:
        theta0_full = convex_init(hub_data, opt)
        u0, v0 = symmetric_init_from(theta0_full, d)
    if needs_round:
        theta0 = ParameterMatrix(u0 @ v0.T)
        round_result = run_round(
            transport if transport is not None else InProcessTransport(),
            part,
            theta0,
            data,
        )
        correction = round_result.correction
    else:
        correction = np.zeros((data.p, data.p))
    if method == "DANIEL":
        fit = daniel_fit(hub_data, correction, u0, v0, opt)
    else:
        baseline = _baseline_for(method, d, sv_soft_threshold, sv_hard_threshold)
        src = (
            GradientSource.surrogate(hub_data, correction)
            if needs_round
            else GradientSource.centralized(data)
        )
        fit = baseline_fit(src, baseline, opt)
    wall = (time.perf_counter() - start) * 1e3
    return PipelineResult(
        fit=fit, partition=part, correction=correction, hub_data=hub_data, wall_time_ms=wall
    )


def run_cell(
    cfg: ExperimentConfig, p: int, d: int, n: int, x: float, method: str, rep: int
) -> ResultRow:
    """Execute one grid cell; a diverging fit becomes a flagged row, not a crash."""
    method = canonical_method(method)
    seed = cell_seed(cfg.base_seed, p, n, x, method, rep)
    truth, data = simulate_cell_data(p, d, n, seed, cfg.burn_in)
    m = make_partition(n, x).m
    try:
        result = run_pipeline(
            data, d, m, method, cfg.optimizer,
            sv_soft_threshold=cfg.sv_soft_threshold,
            sv_hard_threshold=cfg.sv_hard_threshold,
        )
    except DivergenceError as exc:
        return ResultRow(
            method=method, p=p, d=d, n=n, x=x, m=m, rep=rep,
            frob_err=math.nan, subspace_err=math.nan,
            iterations=exc.iteration, wall_time_ms=math.nan, seed=seed,
            error=str(exc),
        )
    fit = result.fit
    raw_product = fit.factors.product()
    z_star = np.vstack([truth.u_star, truth.u_star])
    return ResultRow(
        method=method,
        p=p,
        d=d,
        n=n,
        x=x,
        m=m,
        rep=rep,
        frob_err=frob_error(fit.theta_hat, truth.theta_star),
        subspace_err=procrustes_distance(fit.factors.stacked(), z_star),
        iterations=fit.iterations_used,
        wall_time_ms=result.wall_time_ms,
        seed=seed,
        sym_drift=float(np.max(np.abs(raw_product - raw_product.T))),
    )


def _cells(cfg: ExperimentConfig):
    for method in cfg.methods:
        for p in cfg.p_list:
            for n in cfg.n_list:
                for x in cfg.x_list:
                    for rep in range(cfg.reps):
                        yield (cfg, p, cfg.rank_for(p), n, x, method, rep)


def _run_cell_star(args):
    return run_cell(*args)


def run_grid(cfg: ExperimentConfig, jobs: int = 1, output_path=None) -> list[ResultRow]:
    """Run every cell, write the CSV, and return rows in deterministic order."""
    cells = list(_cells(cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_star, cells, chunksize=4))
    else:
        rows = [run_cell(*cell) for cell in cells]
    rows.sort(key=lambda r: (r.method, r.p, r.d, r.n, r.x, r.rep))
    path = Path(output_path if output_path is not None else cfg.output_path)
    try:
        write_rows_csv(path, rows)
    except OSError:
        path.unlink(missing_ok=True)
        raise
    return rows


def write_rows_csv(path, rows) -> None:
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    with open(tmp, "w", encoding="ascii", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        writer = csv.writer(fh)
        for r in rows:
            writer.writerow(
                [
                    r.method, r.p, r.d, r.n, repr(float(r.x)), r.m, r.rep,
                    repr(float(r.frob_err)), repr(float(r.subspace_err)),
                    r.iterations, repr(float(r.wall_time_ms)), r.seed,
                ]
            )
    tmp.replace(path)


def read_rows_csv(path) -> list[ResultRow]:
    with open(path, "r", encoding="ascii", newline="") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header!r}")
        rows = []
        for rec in csv.reader(fh):
            rows.append(
                ResultRow(
                    method=rec[0], p=int(rec[1]), d=int(rec[2]), n=int(rec[3]),
                    x=float(rec[4]), m=int(rec[5]), rep=int(rec[6]),
                    frob_err=float(rec[7]), subspace_err=float(rec[8]),
                    iterations=int(rec[9]), wall_time_ms=float(rec[10]),
                    seed=int(rec[11]),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Config files: flat key = value lines, lists in brackets, # comments.
# ---------------------------------------------------------------------------

_CONFIG_ORDER = (
    "p_list", "n_list", "x_list", "methods", "reps", "base_seed",
    "d", "d_ratio", "burn_in",
    "eta", "gamma_max", "tol", "lambda", "lambda_scale", "init_steps", "ball_radius",
    "sv_soft_threshold", "sv_hard_threshold",
    "output_path",
)


def _format_value(value) -> str:
    if isinstance(value, bool):
        raise TypeError("no boolean config fields")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    opt = cfg.optimizer
    values = {
        "p_list": "[" + ", ".join(str(v) for v in cfg.p_list) + "]",
        "n_list": "[" + ", ".join(str(v) for v in cfg.n_list) + "]",
        "x_list": "[" + ", ".join(repr(float(v)) for v in cfg.x_list) + "]",
        "methods": "[" + ", ".join(cfg.methods) + "]",
        "reps": cfg.reps,
        "base_seed": cfg.base_seed,
        "burn_in": cfg.burn_in,
        "eta": opt.eta,
        "gamma_max": opt.gamma_max,
        "tol": opt.tol,
        "lambda": "auto" if opt.lam is None else repr(opt.lam),
        "lambda_scale": repr(opt.lam_scale),
        "init_steps": opt.init_steps,
        "ball_radius": "inf" if math.isinf(opt.ball_radius) else repr(opt.ball_radius),
        "output_path": cfg.output_path,
    }
    if cfg.sv_soft_threshold is not None:
        values["sv_soft_threshold"] = repr(cfg.sv_soft_threshold)
    if cfg.sv_hard_threshold is not None:
        values["sv_hard_threshold"] = repr(cfg.sv_hard_threshold)
    if cfg.d is not None:
        values["d"] = cfg.d
    else:
        values["d_ratio"] = repr(cfg.d_ratio)
    lines = [f"{key} = {_format_value(values[key])}" for key in _CONFIG_ORDER if key in values]
    return "\n".join(lines) + "\n"


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config(text: str) -> ExperimentConfig:
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not key = value: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            raw[key] = [] if not inner else [_parse_scalar(tok) for tok in inner.split(",")]
        else:
            raw[key] = _parse_scalar(value)

    known = set(_CONFIG_ORDER)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    opt_kwargs = {}
    if "eta" in raw:
        opt_kwargs["eta"] = float(raw["eta"])
    if "gamma_max" in raw:
        opt_kwargs["gamma_max"] = int(raw["gamma_max"])
    if "tol" in raw:
        opt_kwargs["tol"] = float(raw["tol"])
    if "lambda" in raw:
        opt_kwargs["lam"] = None if raw["lambda"] == "auto" else float(raw["lambda"])
    if "lambda_scale" in raw:
        opt_kwargs["lam_scale"] = float(raw["lambda_scale"])
    if "init_steps" in raw:
        opt_kwargs["init_steps"] = int(raw["init_steps"])
    if "ball_radius" in raw:
        opt_kwargs["ball_radius"] = float(raw["ball_radius"])

    cfg_kwargs = {"optimizer": OptimizerConfig(**opt_kwargs)}
    if "p_list" in raw:
        cfg_kwargs["p_list"] = [int(v) for v in raw["p_list"]]
    if "n_list" in raw:
        cfg_kwargs["n_list"] = [int(v) for v in raw["n_list"]]
    if "x_list" in raw:
        cfg_kwargs["x_list"] = [float(v) for v in raw["x_list"]]
    if "methods" in raw:
        cfg_kwargs["methods"] = [str(v) for v in raw["methods"]]
    for key in ("reps", "base_seed", "burn_in"):
        if key in raw:
            cfg_kwargs[key] = int(raw[key])
    if "d" in raw:
        cfg_kwargs["d"] = int(raw["d"])
    if "d_ratio" in raw:
        cfg_kwargs["d_ratio"] = float(raw["d_ratio"])
    if "sv_soft_threshold" in raw:
        cfg_kwargs["sv_soft_threshold"] = float(raw["sv_soft_threshold"])
    if "sv_hard_threshold" in raw:
        cfg_kwargs["sv_hard_threshold"] = float(raw["sv_hard_threshold"])
    if "output_path" in raw:
        cfg_kwargs["output_path"] = str(raw["output_path"])
    return ExperimentConfig(**cfg_kwargs)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")


# ---------------------------------------------------------------------------
# Estimate dump: magic "DTH1", u32 p, then p*p little-endian float64.
# ---------------------------------------------------------------------------


def write_theta(path, theta: ParameterMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(THETA_MAGIC)
        fh.write(struct.pack("<I", theta.p))
        fh.write(theta.values.astype("<f8").tobytes(order="C"))


def read_theta(path) -> ParameterMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != THETA_MAGIC:
        raise ValueError("not a theta dump (missing DTH1 magic)")
    (p,) = struct.unpack_from("<I", raw, 4)
    body = raw[8:]
    if len(body) != 8 * p * p:
        raise ValueError("theta dump payload length mismatch")
    return ParameterMatrix(np.frombuffer(body, dtype="<f8").reshape(p, p))
