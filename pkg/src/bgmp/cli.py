"""Command-line entry point: ``bgmp run | oracle-check | single``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numerical
failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

import numpy as np

from . import harness
from .channel import dump_channel, sparsify
from .core import Priors, run_bgmp
from .errors import InvalidArgument, NumericalFailure
from .graph import build_graph
from .metrics import mse, use_rate
from .source import calibrate_noise, transmit

EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--print-config", action="store_true",
                   help="echo the effective configuration and exit")
    for f in fields(harness.ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action="store_const", const="true", default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar="VALUE",
                           help="comma-separated list" if f.name in harness._LIST_FIELDS else None)
    p.add_argument("--workers", type=int, default=None,
                   help=f"trial worker processes (default ${harness.WORKERS_ENV} or 1)")


def _config_from_args(args) -> harness.ExperimentConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(harness.ExperimentConfig)
                 if getattr(args, f.name, None) is not None}
    if args.config:
        return harness.load_config(args.config, overrides)
    return harness.make_config(overrides)


def _cmd_run(args, cfg):
    table = harness.run_experiment(cfg, args.workers)
    for fmt, path in (("csv", args.out), ("json", args.json)):
        if path:
            harness.emit(table, fmt, path)
    if not args.out:
        writer_rows = [harness.RESULT_FIELDS] + [
            [harness._fmt(getattr(r, f)) for f in harness.RESULT_FIELDS] for r in table.rows]
        for row in writer_rows:
            print(",".join(row))


def _cmd_oracle(args, cfg):
    reports = harness.oracle_check(cfg, block=args.block, sigma2=args.sigma2)
    print("trial,max_prob_gap,max_mean_gap,mse_bgmp,mse_oracle,mse_gap")
    for r in reports:
        print(f"{r.trial},{r.max_prob_gap:.9g},{r.max_mean_gap:.9g},"
              f"{r.mse_bgmp:.9g},{r.mse_oracle:.9g},{r.mse_gap:.9g}")


def _cmd_single(args, cfg):
    geom, h_full, lam, x, noise_seed = harness.draw_realization(cfg, args.trial)
    rsnr = cfg.rsnr_db_list[-1] if args.rsnr_db is None else args.rsnr_db
    s2 = calibrate_noise(h_full, cfg.p_tx, rsnr, cfg.rsnr_norm, cfg.n_antennas)
    y = transmit(h_full, x, cfg.p_tx, s2, noise_seed)
    channel = sparsify(h_full, geom, cfg.d0_km[0]).with_interference(cfg.p_tx, s2)
    if args.dump_channel:
        dump_channel(args.dump_channel, geom.with_d0(cfg.d0_km[0]), channel)
    out = open(args.trace, "w") if args.trace else sys.stdout
    try:
        def emit(rec):
            out.write(json.dumps(rec) + "\n")
        graph = build_graph(np.sqrt(cfg.p_tx) * channel.h_sparse)
        res = run_bgmp(y, graph, channel.eta_variance, Priors.from_rho(cfg.k_users, cfg.rho),
                       cfg.bgmp_config(), truth=(x, lam), on_iteration=emit)
        emit({"summary": True, "rsnr_db": rsnr, "d0": cfg.d0_km[0], "sparsity": channel.sparsity,
              "edges": graph.num_edges, "iterations_used": res.iterations_used,
              "converged": res.converged, "edge_updates": res.edge_updates,
              "mse": mse(x, res.x_hat), "use": use_rate(lam, res.lambda_hat)})
    finally:
        if out is not sys.stdout:
            out.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgmp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="Monte-Carlo sweep over d0 and RSNR")
    _add_config_flags(p)
    p.add_argument("--out", help="CSV output path (default: CSV to stdout)")
    p.add_argument("--json", help="also write a JSON array of rows here")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("oracle-check", help="compare BGMP with the exact posterior (K <= 12)")
    _add_config_flags(p)
    p.add_argument("--block", action="store_true", help="one antenna per user (BGMP exact)")
    p.add_argument("--sigma2", type=float, default=0.1, help="noise power for --block")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("single", help="one trial with a per-iteration JSON-lines trace")
    _add_config_flags(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--rsnr-db", type=float, default=None, help="default: last rsnr_db_list value")
    p.add_argument("--trace", help="trace output path (default stdout)")
    p.add_argument("--dump-channel", help="write geometry and channel JSON here")
    p.set_defaults(func=_cmd_single)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.print_config:
            sys.stdout.write(cfg.as_text())
            return 0
        args.func(args, cfg)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
