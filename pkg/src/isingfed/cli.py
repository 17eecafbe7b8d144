"""Command-line surface: simulate, fit, experiment, federate-hub/site, eval.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 protocol or
transport failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace

import numpy as np

from .federation import (
    BroadcastMessage,
    DirectoryTransport,
    ProtocolError,
    RoundStats,
    TcpTransport,
    aggregate,
    hub_collect,
    make_correction,
    on_port_bound,
    site_gradient,
    site_respond,
)
from .harness import (
    canonical_method,
    load_config,
    read_theta,
    run_grid,
    run_pipeline,
    simulate_cell_data,
    write_theta,
)
from .kernels import ParameterMatrix
from .metrics import frob_error
from .optimize import DivergenceError, OptimizerConfig, convex_init, daniel_fit, symmetric_init_from
from .sampling import load_dataset, write_dataset_binary, write_dataset_text

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_PROTOCOL = 4


def _optimizer_from(args) -> OptimizerConfig:
    return OptimizerConfig(
        eta=args.eta,
        gamma_max=args.gamma,
        tol=args.tol,
        lam=args.penalty,
        init_steps=args.init_steps,
    )


def _add_optimizer_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eta", type=float, default=0.1, help="gradient step size")
    parser.add_argument("--gamma", type=int, default=50, help="max iterations")
    parser.add_argument("--tol", type=float, default=1e-5, help="stopping threshold on ||theta change||_F")
    parser.add_argument("--penalty", type=float, default=None,
                        help="nuclear-norm penalty for the init (default: sqrt(p log p / n_hub))")
    parser.add_argument("--init-steps", type=int, default=5, help="proximal init updates")


def _cmd_simulate(args) -> int:
    truth, data = simulate_cell_data(args.p, args.d, args.n, args.seed, args.burn_in)
    if args.format == "text":
        write_dataset_text(args.out, data)
    else:
        write_dataset_binary(args.out, data)
    if args.truth_out:
        write_theta(args.truth_out, truth.theta_star)
    print(f"wrote p={data.p} n={data.n} samples to {args.out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    data = load_dataset(args.data)
    if args.sites is not None:
        m = args.sites
    else:
        m = max(1, math.floor(data.n ** args.x))
    method = canonical_method(args.method)
    result = run_pipeline(data, args.d, m, method, _optimizer_from(args))
    fit = result.fit
    final_delta = fit.trace[-1] if fit.trace else math.nan
    print(f"method={method}")
    print(f"p={data.p}")
    print(f"n={data.n}")
    print(f"m={result.partition.m}")
    print(f"iterations={fit.iterations_used}")
    print(f"final_delta={final_delta!r}")
    print(f"wall_time_ms={result.wall_time_ms!r}")
    if args.theta_out:
        write_theta(args.theta_out, fit.theta_hat)
    return EXIT_OK


def _cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.reps is not None:
        cfg = replace(cfg, reps=args.reps)
    out = args.out if args.out is not None else cfg.output_path
    rows = run_grid(cfg, jobs=args.jobs, output_path=out)
    failures = sum(1 for r in rows if r.error)
    print(f"wrote {len(rows)} rows to {out}" + (f" ({failures} flagged)" if failures else ""))
    return EXIT_OK


def _transport_from(args):
    if args.exchange_dir:
        return DirectoryTransport(directory=args.exchange_dir, deadline=args.deadline)
    if getattr(args, "port", None) is not None:
        return TcpTransport(port=args.port, deadline=args.deadline)
    host, _, port = args.hub.rpartition(":")
    return TcpTransport(host=host or "127.0.0.1", port=int(port), deadline=args.deadline)


def _cmd_federate_hub(args) -> int:
    hub_data = load_dataset(args.data)
    opt = _optimizer_from(args)
    theta0_full = convex_init(hub_data, opt)
    u0, v0 = symmetric_init_from(theta0_full, args.d)
    theta0 = ParameterMatrix(u0 @ v0.T)
    transport = _transport_from(args)
    if isinstance(transport, TcpTransport):
        on_port_bound(transport, lambda port: print(f"hub_listening port={port}", flush=True))
    stats = RoundStats()
    broadcast = BroadcastMessage(round_id=args.round, theta0=theta0.values)
    remote_ids = list(range(2, args.sites + 1))
    replies = hub_collect(transport, broadcast, remote_ids, stats)
    hub_msg = site_gradient(hub_data, theta0, site_id=1, round_id=args.round)
    global_grad = aggregate([hub_msg, *replies])
    correction = make_correction(global_grad, hub_msg.gradient)
    fit = daniel_fit(hub_data, correction, u0, v0, opt)
    print(f"sites={args.sites}")
    print(f"gradients_received={stats.gradients_received}")
    print(f"iterations={fit.iterations_used}")
    if args.correction_out:
        write_theta(args.correction_out, ParameterMatrix(0.5 * (correction + correction.T)))
    if args.theta_out:
        write_theta(args.theta_out, fit.theta_hat)
    return EXIT_OK


def _cmd_federate_site(args) -> int:
    local = load_dataset(args.data)
    site_respond(_transport_from(args), local, args.site_id, args.round)
    print(f"site {args.site_id} uploaded its gradient")
    return EXIT_OK


def _cmd_eval(args) -> int:
    theta = read_theta(args.theta)
    truth = read_theta(args.truth)
    print(f"frob_err={frob_error(theta, truth)!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isingfed",
        description="Low-rank Ising embeddings with one-shot federated fitting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="sample a synthetic dataset from a rank-d truth")
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--d", type=int, required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--burn-in", type=int, default=200)
    sim.add_argument("--out", required=True)
    sim.add_argument("--format", choices=("binary", "text"), default="binary")
    sim.add_argument("--truth-out", default=None, help="also dump the true coupling matrix")
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="fit one method on a dataset file")
    fit.add_argument("--data", required=True)
    fit.add_argument("--method", default="DANIEL")
    fit.add_argument("--d", type=int, required=True)
    group = fit.add_mutually_exclusive_group()
    group.add_argument("--x", type=float, default=0.0, help="distributedness level; m = floor(n**x)")
    group.add_argument("--sites", type=int, default=None, help="explicit site count")
    _add_optimizer_flags(fit)
    fit.add_argument("--theta-out", default=None)
    fit.set_defaults(func=_cmd_fit)

    exp = sub.add_parser("experiment", help="run a simulation grid from a config file")
    exp.add_argument("--config", required=True)
    exp.add_argument("--out", default=None)
    exp.add_argument("--jobs", type=int, default=1)
    exp.add_argument("--reps", type=int, default=None, help="override config reps")
    exp.set_defaults(func=_cmd_experiment)

    hub = sub.add_parser("federate-hub", help="serve one round as the hub, then fit")
    hub_t = hub.add_mutually_exclusive_group(required=True)
    hub_t.add_argument("--port", type=int, default=None)
    hub_t.add_argument("--exchange-dir", default=None)
    hub.add_argument("--data", required=True, help="the hub's local shard")
    hub.add_argument("--d", type=int, required=True)
    hub.add_argument("--sites", type=int, required=True, help="total sites including the hub")
    hub.add_argument("--round", type=int, default=1)
    hub.add_argument("--deadline", type=float, default=None)
    _add_optimizer_flags(hub)
    hub.add_argument("--theta-out", default=None)
    hub.add_argument("--correction-out", default=None)
    hub.set_defaults(func=_cmd_federate_hub)

    site = sub.add_parser("federate-site", help="answer one round as a site")
    site_t = site.add_mutually_exclusive_group(required=True)
    site_t.add_argument("--hub", default=None, help="host:port of the hub")
    site_t.add_argument("--exchange-dir", default=None)
    site.add_argument("--data", required=True)
    site.add_argument("--site-id", type=int, required=True)
    site.add_argument("--round", type=int, default=1)
    site.add_argument("--deadline", type=float, default=None)
    site.set_defaults(func=_cmd_federate_site)

    ev = sub.add_parser("eval", help="compare a dumped estimate against a dumped truth")
    ev.add_argument("--theta", required=True)
    ev.add_argument("--truth", required=True)
    ev.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (DivergenceError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
