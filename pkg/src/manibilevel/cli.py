"""Command-line interface: run, sweep, check-grad, ot-demo.

Exit codes: 0 on success, 2 on configuration errors (including the
check-grad dimension guard), 3 on numeric failures. check-grad additionally
exits 1 when a derivative check fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import NumericError
from .harness import (
    ConfigError,
    check_gradients,
    ot_demo,
    parse_config,
    run_experiment,
    run_sweep,
    write_check_report,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manibilevel",
        description="Bilevel optimization on matrix manifolds: experiment harness",
    )
    parser.add_argument("--output-dir", default="out", help="directory for result files")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--parallelism", type=int, default=1, help="sweep worker pool size (default 1)"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run one experiment and write its trace CSV"),
        ("sweep", "run a grid of experiments and write per-cell traces plus a summary"),
        ("check-grad", "verify analytic derivatives against finite differences"),
        ("ot-demo", "solve the transport problem and write plan/metric/projections"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", help="path to the experiment config file")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = Path(args.output_dir)
    try:
        cfg = parse_config(args.config)
        if args.command == "run":
            trace_path = run_experiment(cfg, out_dir, seed=args.seed)
            print(f"trace written to {trace_path}")
        elif args.command == "sweep":
            rows, summary_path = run_sweep(
                cfg, out_dir, parallelism=args.parallelism, seed=args.seed
            )
            failures = [r for r in rows if r.get("error")]
            print(f"summary written to {summary_path} ({len(rows)} cells, "
                  f"{len(failures)} failed)")
        elif args.command == "check-grad":
            report = check_gradients(cfg)
            out_dir.mkdir(parents=True, exist_ok=True)
            all_pass = write_check_report(report, out_dir / "check_grad_report.csv")
            for row in report:
                print(f"{row['status']:4s}  {row['check']:24s} "
                      f"max_rel_err={row['max_rel_err']:.3e} tol={row['tolerance']:.1e}")
            if not all_pass:
                return 1
        elif args.command == "ot-demo":
            result = ot_demo(cfg, out_dir, seed=args.seed)
            print(f"marginal residual {result['marginal_residual']:.3e}")
            if "nn_accuracy" in result:
                print(f"1-NN transfer accuracy {result['nn_accuracy']:.3f}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
