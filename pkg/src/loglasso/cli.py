"""Command line entry point: ``loglasso {fit,select,simulate,check}``.

Exit codes: 0 success, 1 usage error, 2 solver did not converge, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .asymptotics import condition_report
from .design import TableShape, saturated_design
from .glasso import PenaltyConfig, SolverConfig, fit
from .harness import Scenario, emit_csv, run_scenario
from .model import BlockedVector, load_table, mean_map

EXIT_OK, EXIT_USAGE, EXIT_NOCONV, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2)
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loglasso", description="Group-lasso selection of hierarchical log-linear models.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def fit_args(sp):
        sp.add_argument("--table", required=True, help="table JSON {'shape': [...], 'counts': [...]}")
        sp.add_argument("--lambda", dest="lam", type=float, required=True)
        sp.add_argument("--block-weights", choices=["sqrt-dim", "unit"], default="sqrt-dim")
        sp.add_argument("--tol", type=float, default=1e-7)
        sp.add_argument("--max-iter", type=int, default=20000)

    sp = sub.add_parser("fit", help="fit the penalized estimator and write a JSON report")
    fit_args(sp)
    sp.add_argument("--out", help="output JSON path (stdout if omitted)")

    sp = sub.add_parser("select", help="fit and print the selected facets")
    fit_args(sp)

    sp = sub.add_parser("simulate", help="run a Monte-Carlo scenario")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True, help="CSV output path")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--timing", action="store_true", help="record wall time (output no longer reproducible)")

    sp = sub.add_parser("check", help="print condition diagnostics at a true parameter")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--table", help="table JSON; supplies shape and N")
    src.add_argument("--shape", help="comma-separated level counts, e.g. 2,2,2")
    sp.add_argument("--N", type=int, help="sample size (required with --shape)")
    sp.add_argument("--theta0", required=True, help="JSON file or inline JSON {'1': [...], '1,2': [...]}")
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--block-weights", choices=["sqrt-dim", "unit"], default="sqrt-dim")
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--dump-design", metavar="CSV", help="also write the saturated design matrix as CSV")
    return p


def _fit(args):
    table = load_table(args.table)
    design = saturated_design(table.shape)
    penalty = PenaltyConfig(args.lam, args.block_weights)
    return fit(design, table, penalty, SolverConfig(max_iter=args.max_iter, kkt_tol=args.tol))


def _cmd_fit(args) -> int:
    res = _fit(args)
    text = json.dumps(res.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK if res.converged else EXIT_NOCONV


def _cmd_select(args) -> int:
    res = _fit(args)
    print(json.dumps(res.facets.to_lists()))
    return EXIT_OK if res.converged else EXIT_NOCONV


def _cmd_simulate(args) -> int:
    scenario = Scenario.load(args.scenario)
    summary = run_scenario(scenario, workers=args.workers, timing=args.timing)
    emit_csv(summary, args.out)
    return EXIT_OK


def _read_json_arg(value: str):
    path = Path(value)
    if path.suffix == ".json" or path.exists():
        return json.loads(path.read_text())
    return json.loads(value)


def _cmd_check(args) -> int:
    if args.table:
        table = load_table(args.table)
        shape, N = table.shape, table.N
    else:
        if args.N is None:
            raise UsageError("check: --N is required with --shape")
        shape = TableShape.of(int(v) for v in args.shape.split(","))
        N = args.N
    design = saturated_design(shape)
    theta0 = BlockedVector.from_mapping(design, _read_json_arg(args.theta0))
    pi0 = mean_map(design, theta0.values, 1.0)
    rep = condition_report(design, pi0, theta0, N, PenaltyConfig(args.lam, args.block_weights), eps=args.eps)
    if args.dump_design:
        with open(args.dump_design, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"{h.key}#{j}" for h in design.subsets for j in range(design.blocks[design.position(h)].dim)])
            w.writerows(design.int_matrix.tolist())
    print(json.dumps(rep.to_dict(), indent=2, default=_json_default))
    return EXIT_OK


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


COMMANDS = {"fit": _cmd_fit, "select": _cmd_select, "simulate": _cmd_simulate, "check": _cmd_check}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"loglasso: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"loglasso: invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
