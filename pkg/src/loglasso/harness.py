"""Seeded Monte-Carlo experiments on model recovery, error rates and normality.

Every replication draws its table from its own generator seeded with
``(seed, rung, rep)``, so results do not depend on execution order or on
how replications are spread over worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .asymptotics import CltStandardizer
from .complex import SimplicialComplex, downward_closure
from .design import MAX_DENSE_CELLS, Design, TableShape, saturated_design
from .glasso import PenaltyConfig, SolverConfig, fit
from .model import BlockedVector, mean_map, sample_table

logger = logging.getLogger(__name__)

MAX_TOTAL_REPS = 100_000

CSV_COLUMNS = (
    "N",
    "lambda",
    "recovery_rate",
    "recovery_se",
    "median_l2_error",
    "mean_kkt",
    "ks_max",
    "conditioning_rate",
    "failures",
    "seconds",
)

__all__ = [
    "LambdaRule",
    "Scenario",
    "RepOutcome",
    "RungSummary",
    "SimulationSummary",
    "make_theta0",
    "run_scenario",
    "emit_csv",
    "read_csv",
    "CSV_COLUMNS",
]


@dataclass(frozen=True)
class LambdaRule:
    """``c * sqrt(log(I) / N)`` or an explicit value per rung."""

    type: str = "sqrt_log_over_n"
    c: float = 1.0
    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.type not in ("sqrt_log_over_n", "explicit"):
            raise ValueError(f"unknown lambda rule {self.type!r}")

    def __call__(self, N: int, I: int, rung: int) -> float:
        if self.type == "explicit":
            return float(self.values[rung])
        return float(self.c * math.sqrt(math.log(I) / N))

    def to_dict(self) -> dict:
        if self.type == "explicit":
            return {"type": "explicit", "values": list(self.values)}
        return {"type": self.type, "c": self.c}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LambdaRule":
        if d["type"] == "explicit":
            return cls("explicit", values=tuple(float(v) for v in d["values"]))
        return cls(d["type"], c=float(d["c"]))


@dataclass
class Scenario:
    shape: TableShape
    facets: SimplicialComplex
    theta0: dict[str, list[float]]
    N_ladder: list[int]
    lambda_rule: LambdaRule
    reps: int
    seed: int
    block_weights: str = "sqrt-dim"

    def __post_init__(self) -> None:
        if self.facets.K != self.shape.K:
            raise ValueError("facets and shape disagree on the number of factors")
        if self.shape.I > MAX_DENSE_CELLS:
            raise ValueError(f"scenario table has {self.shape.I} cells; the limit is {MAX_DENSE_CELLS}")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if self.reps * len(self.N_ladder) > MAX_TOTAL_REPS:
            raise ValueError(
                f"{self.reps} reps x {len(self.N_ladder)} rungs exceeds the limit of {MAX_TOTAL_REPS} fits"
            )
        if any(b <= a for a, b in zip(self.N_ladder, self.N_ladder[1:])):
            raise ValueError("N ladder must be strictly increasing")
        if self.lambda_rule.type == "explicit" and len(self.lambda_rule.values) != len(self.N_ladder):
            raise ValueError("explicit lambda rule needs one value per rung")
        design = saturated_design(self.shape)
        H = set(downward_closure(self.facets))
        theta = BlockedVector.from_mapping(design, self.theta0)
        for h, nrm in theta.norms().items():
            if h in H and nrm == 0:
                raise ValueError(f"true block {h.key} must be nonzero")
            if h not in H and nrm != 0:
                raise ValueError(f"block {h.key} is outside the true model but nonzero")

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        shape = TableShape.of(d["shape"])
        return cls(
            shape=shape,
            facets=SimplicialComplex.from_lists(shape.K, d["facets"]),
            theta0={str(k): [float(x) for x in v] for k, v in d["theta0"].items()},
            N_ladder=[int(n) for n in d["N_ladder"]],
            lambda_rule=LambdaRule.from_dict(d["lambda_rule"]),
            reps=int(d["reps"]),
            seed=int(d["seed"]),
            block_weights=d.get("block_weights", "sqrt-dim"),
        )

    @classmethod
    def load(cls, path: str | PathLike) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape.levels),
            "facets": self.facets.to_lists(),
            "theta0": self.theta0,
            "N_ladder": list(self.N_ladder),
            "lambda_rule": self.lambda_rule.to_dict(),
            "reps": self.reps,
            "seed": self.seed,
            "block_weights": self.block_weights,
        }


def make_theta0(
    shape: TableShape,
    facets: SimplicialComplex,
    norms: float | Mapping[str, float],
    seed: int = 0,
) -> dict[str, list[float]]:
    """Random true parameter: uniform block directions scaled to given norms."""
    rng = np.random.default_rng(seed)
    design = saturated_design(shape)
    out = {}
    for h in downward_closure(facets):
        d = design.blocks[design.position(h)].dim
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        r = norms if isinstance(norms, (int, float)) else norms[h.key]
        out[h.key] = (float(r) * v).tolist()
    return out


@dataclass
class RepOutcome:
    rung: int
    rep: int
    converged: bool
    recovered: bool
    l2_error: float
    kkt: float
    X: np.ndarray | None = None


@dataclass
class RungSummary:
    N: int
    lam: float
    reps: int
    recovery_rate: float
    recovery_se: float
    median_l2_error: float
    mean_kkt: float
    ks_max: float
    ks_per_coord: list[float]
    conditioning_rate: float
    failures: int
    seconds: float | None = None
    X_cov: np.ndarray | None = None

    @property
    def flagged(self) -> bool:
        return self.failures > 0.05 * self.reps

    def row(self) -> dict:
        return {
            "N": self.N,
            "lambda": self.lam,
            "recovery_rate": self.recovery_rate,
            "recovery_se": self.recovery_se,
            "median_l2_error": self.median_l2_error,
            "mean_kkt": self.mean_kkt,
            "ks_max": self.ks_max,
            "conditioning_rate": self.conditioning_rate,
            "failures": self.failures,
            "seconds": self.seconds,
        }


@dataclass
class SimulationSummary:
    rungs: list[RungSummary] = field(default_factory=list)

    @property
    def recovery(self) -> np.ndarray:
        return np.array([r.recovery_rate for r in self.rungs])

    def error_slope(self) -> float:
        """Least-squares slope of log median error against log N."""
        N = np.log([r.N for r in self.rungs])
        e = np.log([r.median_l2_error for r in self.rungs])
        return float(np.polyfit(N, e, 1)[0])


class _Context:
    """Per-scenario objects shared by all replications."""

    def __init__(self, s: Scenario, solver: SolverConfig | None):
        self.scenario = s
        self.solver = solver or SolverConfig()
        self.design = saturated_design(s.shape)
        self.theta0 = BlockedVector.from_mapping(self.design, s.theta0)
        self.H = downward_closure(s.facets)
        self.design_H = self.design.sub_design(self.H)
        self.theta0_H = self.theta0.restrict(self.design_H).values
        self.pi0 = mean_map(self.design, self.theta0.values, 1.0)
        self.lams = [s.lambda_rule(N, s.shape.I, i) for i, N in enumerate(s.N_ladder)]
        weights = PenaltyConfig(0.0, s.block_weights)
        self.clt = CltStandardizer(self.design_H, self.theta0_H, self.pi0, weights) if len(self.H) else None

    def run_rep(self, rung: int, rep: int) -> RepOutcome:
        s = self.scenario
        N = s.N_ladder[rung]
        lam = self.lams[rung]
        rng = np.random.default_rng([s.seed, rung, rep])
        table = sample_table(self.pi0, N, rng, s.shape)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = fit(self.design, table, PenaltyConfig(lam, s.block_weights), self.solver)
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as e:
            logger.warning("rung %d rep %d failed: %s", rung, rep, e)
            return RepOutcome(rung, rep, False, False, float("nan"), float("nan"))
        theta_H = res.theta.restrict(self.design_H).values
        err = float(np.linalg.norm(theta_H - self.theta0_H))
        recovered = res.facets == s.facets
        X = None
        if recovered and self.clt is not None:
            X = self.clt(theta_H, N, lam).X
        return RepOutcome(rung, rep, res.converged, recovered, err, res.kkt.worst, X)


def _run_chunk(args) -> list[RepOutcome]:
    scenario_dict, solver, tasks = args
    ctx = _Context(Scenario.from_dict(scenario_dict), solver)
    return [ctx.run_rep(r, k) for r, k in tasks]


def _summarize(N: int, lam: float, outs: Sequence[RepOutcome], seconds: float | None) -> RungSummary:
    reps = len(outs)
    ok = [o for o in outs if o.converged]
    failures = reps - len(ok)
    rec = np.array([o.recovered for o in outs], dtype=float)
    p = float(rec.mean()) if reps else float("nan")
    se = math.sqrt(p * (1 - p) / reps) if reps else float("nan")
    errs = np.array([o.l2_error for o in outs if np.isfinite(o.l2_error)])
    kkts = np.array([o.kkt for o in outs if np.isfinite(o.kkt)])
    Xs = [o.X for o in outs if o.X is not None]
    ks: list[float] = []
    cov = None
    if len(Xs) >= 2:
        Xa = np.vstack(Xs)
        ks = [float(stats.kstest(Xa[:, j], "norm").statistic) for j in range(Xa.shape[1])]
        cov = np.atleast_2d(np.cov(Xa, rowvar=False))
    return RungSummary(
        N=N,
        lam=lam,
        reps=reps,
        recovery_rate=p,
        recovery_se=se,
        median_l2_error=float(np.median(errs)) if errs.size else float("nan"),
        mean_kkt=float(kkts.mean()) if kkts.size else float("nan"),
        ks_max=max(ks) if ks else float("nan"),
        ks_per_coord=ks,
        conditioning_rate=len(Xs) / reps if reps else float("nan"),
        failures=failures,
        seconds=seconds,
        X_cov=cov,
    )


def run_scenario(
    s: Scenario,
    solver: SolverConfig | None = None,
    workers: int = 1,
    timing: bool = False,
) -> SimulationSummary:
    """Sample, fit and score ``s.reps`` tables at every rung of the ladder.

    Solver failures are recorded per replication rather than raised. Wall
    time is only recorded with ``timing=True`` so that output is otherwise
    reproducible byte for byte.
    """
    summary = SimulationSummary()
    ctx = _Context(s, solver) if workers <= 1 else None
    for rung, N in enumerate(s.N_ladder):
        t0 = time.perf_counter()
        tasks = [(rung, k) for k in range(s.reps)]
        if ctx is not None:
            outs = [ctx.run_rep(r, k) for r, k in tasks]
        else:
            chunks = [tasks[i::workers] for i in range(workers)]
            with ProcessPoolExecutor(workers) as ex:
                parts = ex.map(_run_chunk, [(s.to_dict(), solver, c) for c in chunks])
            outs = sorted((o for part in parts for o in part), key=lambda o: o.rep)
        lam = s.lambda_rule(N, s.shape.I, rung)
        rs = _summarize(N, lam, outs, time.perf_counter() - t0 if timing else None)
        if rs.flagged:
            logger.warning("N=%d: %d of %d fits failed to converge", N, rs.failures, rs.reps)
        summary.rungs.append(rs)
    return summary


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_csv(summary: SimulationSummary, path: str | PathLike) -> None:
    """One row per rung; floats written with ``repr`` so they parse back exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(CSV_COLUMNS)
        for r in summary.rungs:
            row = r.row()
            w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_csv(path: str | PathLike) -> list[dict[str, float | None]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (float(v) if v != "" else None) for k, v in row.items()})
    return out
