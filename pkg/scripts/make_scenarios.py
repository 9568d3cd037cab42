"""Write the frozen Monte-Carlo scenario files used by the acceptance tests.

True parameters are drawn once with ``make_theta0`` and stored verbatim, so
the fixtures never change unless this script is rerun. The lambda constants
come from ``pilot_lambda.py`` run on seeds disjoint from the ones below.

    python3 scripts/make_scenarios.py [outdir]
"""

import json
import sys
from pathlib import Path

from loglasso.complex import SimplicialComplex
from loglasso.design import TableShape
from loglasso.harness import make_theta0

CI = [[1, 2], [2, 3]]  # factors 1 and 3 independent given 2


def scenario(levels, facets, norm, theta_seed, ladder, c, reps, seed):
    shape = TableShape(tuple(levels))
    theta0 = make_theta0(shape, SimplicialComplex.from_lists(shape.K, facets), norm, seed=theta_seed)
    return {
        "shape": list(levels),
        "facets": facets,
        "theta0": theta0,
        "N_ladder": ladder,
        "lambda_rule": {"type": "sqrt_log_over_n", "c": c},
        "reps": reps,
        "seed": seed,
    }


SCENARIOS = {
    # unit block norms; pilot recovery 1.00 at every rung with c = 1
    "recovery": scenario((2, 2, 2), CI, 1.0, 0, [500, 2000, 8000], 1.0, 200, 20240101),
    # weaker effects keep the shrinkage bias below the sampling error on the ladder
    "rate": scenario((2, 2, 2), CI, 0.5, 0, [1000, 4000, 16000, 64000], 1.0, 200, 20240202),
    # 2x2 independence; c = 3 keeps recovery near 1 while the bias correction stays accurate
    "clt": scenario((2, 2), [[1], [2]], 0.2, 0, [10000], 3.0, 500, 20240303),
}


def main(outdir: str = "tests/fixtures") -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, sc in SCENARIOS.items():
        (out / f"{name}.json").write_text(json.dumps(sc, indent=2) + "\n")
        print(f"wrote {out / name}.json")


if __name__ == "__main__":
    main(*sys.argv[1:])
