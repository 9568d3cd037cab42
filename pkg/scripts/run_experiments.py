"""Run every frozen scenario and write one CSV per scenario.

    python3 scripts/run_experiments.py [--outdir results] [--workers 4]
"""

import argparse
from pathlib import Path

from loglasso.harness import Scenario, emit_csv, run_scenario

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--outdir", default="results")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args(argv)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(FIXTURES.glob("*.json")):
        summary = run_scenario(Scenario.load(path), workers=args.workers, timing=True)
        emit_csv(summary, out / f"{path.stem}.csv")
        for r in summary.rungs:
            print(f"{path.stem:9s} N={r.N:<6d} recovery={r.recovery_rate:.3f} error={r.median_l2_error:.4f} ks={r.ks_max}")
        if len(summary.rungs) > 1:
            print(f"{path.stem:9s} log-log error slope {summary.error_slope():.3f}")


if __name__ == "__main__":
    main()
