"""Group-lasso penalized likelihood for hierarchical log-linear models.

The estimator maximizes ``(1/N) l(theta) - lam * sum_h w_h ||theta_h||_2``
over the saturated parameter. Internally we minimize the negated objective
``f + g`` with ``f = -(1/N) l`` and ``g`` the penalty, so every residual and
tolerance below refers to the minimization problem.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .complex import InteractionClass, SimplicialComplex, maximal_elements
from .design import Design
from .model import (
    BlockedVector,
    CellDistribution,
    ContingencyTable,
    MLEConfig,
    fit_mle,
    log_likelihood,
    mean_map,
)

logger = logging.getLogger(__name__)

__all__ = [
    "PenaltyConfig",
    "SolverConfig",
    "KKTReport",
    "FitResult",
    "SmoothedMLEReport",
    "NonHierarchicalWarning",
    "objective",
    "group_prox",
    "null_lambda",
    "fit",
    "kkt_report",
    "select_model",
    "smoothed_mle_check",
    "lambda_path",
]


class NonHierarchicalWarning(UserWarning):
    """The active set is not downward closed."""


@dataclass
class PenaltyConfig:
    """Global level ``lam`` and per-block weights.

    ``block_weights`` is ``"sqrt-dim"`` (``sqrt(d_h)``), ``"unit"``, a
    sequence aligned with the design blocks, or a mapping from block keys
    such as ``"1,2"`` to weights.
    """

    lam: float
    block_weights: str | Sequence[float] | Mapping[str, float] = "sqrt-dim"

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be a nonnegative number, got {self.lam!r}")
        if isinstance(self.block_weights, str) and self.block_weights not in ("sqrt-dim", "unit"):
            raise ValueError(f"unknown block weight rule {self.block_weights!r}")

    def weights(self, design: Design) -> np.ndarray:
        bw = self.block_weights
        if bw == "sqrt-dim":
            w = np.sqrt(np.asarray(design.dims, dtype=float))
        elif bw == "unit":
            w = np.ones(len(design.blocks))
        elif isinstance(bw, Mapping):
            try:
                w = np.array([float(bw[h.key]) for h in design.subsets])
            except KeyError as e:
                raise ValueError(f"no explicit weight for block {e.args[0]!r}") from None
        else:
            w = np.asarray(bw, dtype=float)
            if w.shape != (len(design.blocks),):
                raise ValueError(f"expected {len(design.blocks)} block weights, got {w.size}")
        if np.any(w <= 0):
            raise ValueError("block weights must be positive")
        return w

    def with_lambda(self, lam: float) -> "PenaltyConfig":
        return PenaltyConfig(lam, self.block_weights)


@dataclass
class SolverConfig:
    max_iter: int = 20000
    kkt_tol: float = 1e-7
    step_init: float = 1.0
    backtrack: float = 0.5
    accelerate: bool = True
    restart: bool = True
    # Newton refinement on the active blocks; drives residuals to rounding level
    polish: bool = True
    polish_every: int = 25


@dataclass
class KKTReport:
    """Per-block optimality residuals.

    For nonzero blocks the residual is the norm of the stationarity equation;
    for zero blocks it is the amount by which the score norm exceeds the
    block threshold (zero when the subgradient condition holds).
    """

    cls: InteractionClass
    residuals: np.ndarray
    active: np.ndarray
    score_norms: np.ndarray
    thresholds: np.ndarray

    @property
    def worst(self) -> float:
        return float(self.residuals.max(initial=0.0))

    def ok(self, tol: float) -> bool:
        return self.worst <= tol

    def to_dict(self) -> dict:
        return {
            "max_residual": self.worst,
            "blocks": {
                h.key: {"active": bool(a), "residual": float(r)}
                for h, a, r in zip(self.cls, self.active, self.residuals)
            },
        }


@dataclass
class FitResult:
    theta: BlockedVector
    means: CellDistribution
    active: InteractionClass
    facets: SimplicialComplex
    kkt: KKTReport
    penalty: PenaltyConfig
    objective_trace: list[float]
    iterations: int
    converged: bool
    hierarchical: bool = True
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_mapping(),
            "active": self.active.to_lists(),
            "facets": self.facets.to_lists(),
            "kkt": self.kkt.to_dict(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "lambda": float(self.penalty.lam),
            "hierarchical": bool(self.hierarchical),
        }


def group_prox(v: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft-thresholding: the prox of ``threshold * ||.||_2``."""
    v = np.asarray(v, dtype=float)
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    nv = np.linalg.norm(v)
    if nv <= threshold:
        return np.zeros_like(v)
    return (1.0 - threshold / nv) * v


def _penalty(design: Design, theta: np.ndarray, thr: np.ndarray) -> float:
    return float(thr @ design.block_norms(theta))


def objective(design: Design, theta, table: ContingencyTable, penalty: PenaltyConfig) -> float:
    """The maximized program ``(1/N) l(theta) - lam * sum_h w_h ||theta_h||``."""
    theta = np.asarray(theta, dtype=float)
    thr = penalty.lam * penalty.weights(design)
    return log_likelihood(design, theta, table) / table.N - _penalty(design, theta, thr)


def null_lambda(design: Design, table: ContingencyTable, block_weights="sqrt-dim") -> float:
    """Smallest ``lam`` for which ``theta = 0`` is optimal."""
    w = PenaltyConfig(0.0, block_weights).weights(design)
    N = table.N
    score = design.rmatvec(table.counts - N / design.shape.I)
    norms = design.block_norms(score)
    return float(np.max(norms / (N * w), initial=0.0))


class _Problem:
    """Smooth part ``-(1/N) l`` and its gradient on a fixed table."""

    def __init__(self, design: Design, table: ContingencyTable, thr: np.ndarray):
        self.design = design
        self.counts = np.asarray(table.counts, dtype=float)
        self.N = float(table.N)
        self.thr = thr
        self.suff = design.rmatvec(self.counts) / self.N
        self.evals = 0

    def smooth(self, theta: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        self.evals += 1
        eta = self.design.matvec(theta)
        c = eta.max()
        b = np.exp(eta - c)
        z = b.sum()
        p = b / z
        f = -(self.suff @ theta) + c + np.log(z)
        grad = self.design.rmatvec(p) - self.suff
        return float(f), grad, p

    def penalty(self, theta: np.ndarray) -> float:
        return _penalty(self.design, theta, self.thr)

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        out = np.empty_like(v)
        for s, t in zip(self.design.slices, self.thr):
            out[s] = group_prox(v[s], step * t)
        return out

    def kkt(self, theta: np.ndarray, grad: np.ndarray) -> KKTReport:
        return _kkt_from_grad(self.design, theta, grad, self.thr)


def _kkt_from_grad(design: Design, theta: np.ndarray, grad: np.ndarray, thr: np.ndarray) -> KKTReport:
    # grad is the gradient of -(1/N) l, i.e. -(1/N) U.T (n - m)
    nb = len(design.blocks)
    res = np.zeros(nb)
    active = np.zeros(nb, dtype=bool)
    snorm = np.zeros(nb)
    for i, s in enumerate(design.slices):
        th = theta[s]
        g = grad[s]
        nt = np.linalg.norm(th)
        snorm[i] = np.linalg.norm(g)
        if nt > 0:
            active[i] = True
            res[i] = np.linalg.norm(g + thr[i] * th / nt)
        else:
            res[i] = max(0.0, snorm[i] - thr[i])
    return KKTReport(design.cls, res, active, snorm, thr.copy())


def kkt_report(design: Design, theta, table: ContingencyTable, penalty: PenaltyConfig) -> KKTReport:
    theta = np.asarray(theta, dtype=float)
    thr = penalty.lam * penalty.weights(design)
    prob = _Problem(design, table, thr)
    _, grad, _ = prob.smooth(theta)
    return prob.kkt(theta, grad)


def _polish(prob: _Problem, x: np.ndarray, active: np.ndarray, max_steps: int = 50) -> np.ndarray | None:
    """Newton iterations on the active blocks with the others held at zero.

    The restricted objective is smooth wherever every active block is
    nonzero. Returns the refined point, or None if no progress was made.
    """
    design = prob.design
    idx = [i for i in range(len(design.blocks)) if active[i]]
    if not idx:
        return None
    cols = np.concatenate([np.arange(design.offsets[i], design.offsets[i + 1]) for i in idx])
    Ua = design.matrix[:, cols]
    suff = prob.suff[cols]
    local = []
    pos = 0
    for i in idx:
        d = design.offsets[i + 1] - design.offsets[i]
        local.append((slice(pos, pos + d), prob.thr[i]))
        pos += d

    def value(t: np.ndarray) -> float:
        eta = Ua @ t
        c = eta.max()
        return float(-(suff @ t) + c + np.log(np.exp(eta - c).sum()) + sum(w * np.linalg.norm(t[s]) for s, w in local))

    def derivs(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        eta = Ua @ t
        p = np.exp(eta - eta.max())
        p /= p.sum()
        Up = Ua.T @ p
        g = Up - suff
        H = (Ua.T * p) @ Ua - np.outer(Up, Up)
        for s, w in local:
            ts = t[s]
            nt = np.linalg.norm(ts)
            if nt == 0:
                return g, None  # type: ignore[return-value]
            u = ts / nt
            g[s] += w * u
            H[s, s] += (w / nt) * (np.eye(ts.size) - np.outer(u, u))
        return g, H

    t = x[cols].copy()
    F = value(t)
    g, H = derivs(t)
    moved = False
    for _ in range(max_steps):
        if H is None:
            break
        gn = np.max(np.abs(g))
        if gn <= 1e-16:
            break
        try:
            d = scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(H, g, rcond=None)[0]
        a = 1.0
        accepted = False
        for _ in range(40):
            cand = t - a * d
            Fc = value(cand)
            if Fc <= F - 1e-4 * a * (g @ d):
                accepted = True
            elif Fc <= F + 1e-14 * max(1.0, abs(F)):
                # decrease below rounding resolution: judge by the gradient instead
                gc, Hc = derivs(cand)
                accepted = Hc is not None and np.max(np.abs(gc)) < gn
            if accepted:
                break
            a *= 0.5
        if not accepted:
            break
        t, F = cand, min(Fc, F)
        g, H = derivs(t)
        moved = True
    if not moved:
        return None
    out = np.zeros_like(x)
    out[cols] = t
    return out


def _result(
    design: Design,
    table: ContingencyTable,
    penalty: PenaltyConfig,
    x: np.ndarray,
    kkt: KKTReport,
    trace: list[float],
    iterations: int,
    converged: bool,
    messages: list[str],
) -> FitResult:
    active = InteractionClass(tuple(h for h, a in zip(design.subsets, kkt.active) if a))
    facets = maximal_elements(active, design.shape.K)
    hierarchical = active.is_downward_closed()
    if not hierarchical:
        msg = f"non-hierarchical active set: {active.to_lists()}"
        messages.append(msg)
        warnings.warn(msg, NonHierarchicalWarning, stacklevel=3)
    return FitResult(
        theta=BlockedVector.of(design, x),
        means=mean_map(design, x, table.N),
        active=active,
        facets=facets,
        kkt=kkt,
        penalty=penalty,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
        hierarchical=hierarchical,
        messages=messages,
    )


def _fit_unpenalized(design, table, penalty, cfg, theta0) -> FitResult:
    warnings.warn(
        "lambda = 0: solving the unpenalized MLE; it may not exist or be unique on sparse tables",
        RuntimeWarning,
        stacklevel=3,
    )
    mle = fit_mle(design, table, MLEConfig(), theta0=theta0)
    x = mle.theta.values
    thr = np.zeros(len(design.blocks))
    prob = _Problem(design, table, thr)
    _, grad, _ = prob.smooth(x)
    kkt = prob.kkt(x, grad)
    msgs = [] if mle.converged else [f"MLE solver status: {mle.status}"]
    trace = [v / table.N for v in mle.loglik_trace]
    return _result(design, table, penalty, x, kkt, trace, mle.iterations, mle.converged, msgs)


def fit(
    design: Design,
    table: ContingencyTable,
    penalty: PenaltyConfig,
    config: SolverConfig | None = None,
    theta0=None,
) -> FitResult:
    """Group-lasso estimate on ``design`` (normally the saturated design).

    Accelerated proximal gradient with backtracking. A momentum step that
    would worsen the objective is discarded and momentum restarted from the
    last accepted point, so accepted objective values never decrease. When
    ``config.polish`` is set, Newton refinement on the current active blocks
    is attempted periodically and after the KKT test first passes.

    Terminates when every block satisfies the subgradient conditions within
    ``config.kkt_tol``; otherwise returns with ``converged=False``.
    """
    cfg = config or SolverConfig()
    if penalty.lam == 0:
        return _fit_unpenalized(design, table, penalty, cfg, theta0)
    if table.N <= 0:
        raise ValueError("the table is empty")
    thr = penalty.lam * penalty.weights(design)
    prob = _Problem(design, table, thr)
    tol = cfg.kkt_tol

    x = np.zeros(design.ncols) if theta0 is None else np.asarray(theta0, dtype=float).reshape(-1).copy()
    if x.size != design.ncols:
        raise ValueError(f"initial point has {x.size} entries, design has {design.ncols}")
    f_x, g_x, _ = prob.smooth(x)
    F_x = f_x + prob.penalty(x)
    trace = [-F_x]
    kkt = prob.kkt(x, g_x)
    messages: list[str] = []

    def try_polish(x, F_x):
        cand = _polish(prob, x, kkt.active)
        if cand is None:
            return None
        f_c, g_c, _ = prob.smooth(cand)
        F_c = f_c + prob.penalty(cand)
        if F_c > F_x + 1e-13 * max(1.0, abs(F_x)):
            return None
        return cand, f_c, g_c, F_c

    converged = kkt.ok(tol)
    it = 0
    if not converged:
        y, f_y, g_y = x, f_x, g_x
        t_mom = 1.0
        momentum = False
        step = cfg.step_init
        support = kkt.active.copy()
        stable = 0
        for it in range(1, cfg.max_iter + 1):
            while True:
                z = prob.prox(y - step * g_y, step)
                f_z, g_z, _ = prob.smooth(z)
                d = z - y
                if f_z <= f_y + g_y @ d + (d @ d) / (2 * step) + 1e-15 * max(1.0, abs(f_y)):
                    break
                step *= cfg.backtrack
                if step < 1e-20:
                    break
            F_z = f_z + prob.penalty(z)
            if F_z > F_x:
                if momentum and cfg.restart:
                    y, f_y, g_y = x, f_x, g_x
                    t_mom, momentum = 1.0, False
                    continue
                if F_z > F_x + 1e-13 * max(1.0, abs(F_x)):
                    messages.append("no descent from the last accepted point")
                    break
            x_prev = x
            x, f_x, g_x, F_x = z, f_z, g_z, F_z
            trace.append(-F_x)
            kkt = prob.kkt(x, g_x)
            if kkt.ok(tol):
                converged = True
                break
            if np.array_equal(kkt.active, support):
                stable += 1
            else:
                support, stable = kkt.active.copy(), 0
            if cfg.polish and stable and stable % cfg.polish_every == 0:
                out = try_polish(x, F_x)
                if out is not None:
                    x, f_x, g_x, F_x = out
                    trace.append(-F_x)
                    kkt = prob.kkt(x, g_x)
                    y, f_y, g_y = x, f_x, g_x
                    t_mom, momentum = 1.0, False
                    if kkt.ok(tol):
                        converged = True
                        break
                    continue
            if cfg.accelerate:
                t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
                y = x + ((t_mom - 1.0) / t_new) * (x - x_prev)
                t_mom = t_new
                momentum = True
                f_y, g_y, _ = prob.smooth(y)
            else:
                y, f_y, g_y = x, f_x, g_x
    if converged and cfg.polish and kkt.active.any():
        out = try_polish(x, F_x)
        if out is not None:
            kkt_c = prob.kkt(out[0], out[2])
            if kkt_c.ok(tol) and np.array_equal(kkt_c.active, kkt.active):
                x, f_x, g_x, F_x = out
                kkt = kkt_c
                trace.append(-F_x)
    if not converged:
        messages.append(f"not converged after {it} iterations; worst KKT residual {kkt.worst:.3e}")
        logger.info(messages[-1])
    return _result(design, table, penalty, x, kkt, trace, it, converged, messages)


def select_model(result: FitResult) -> SimplicialComplex:
    """Facets of the estimated model: maximal nonzero blocks, no closure applied."""
    return maximal_elements(result.active, result.facets.K)


@dataclass
class SmoothedMLEReport:
    cls: InteractionClass
    inner: np.ndarray  # <theta_h, U_h.T (n - m)>
    target: np.ndarray  # N * lam * w_h * ||theta_h||
    tolerance: np.ndarray
    suff_gap: np.ndarray  # ||U_h.T (n - m)||

    @property
    def abs_violation(self) -> np.ndarray:
        return np.abs(self.inner - self.target)

    @property
    def max_relative(self) -> float:
        if not self.target.size:
            return 0.0
        return float(np.max(self.abs_violation / self.target))

    @property
    def ok(self) -> bool:
        return bool(np.all(self.abs_violation <= self.tolerance))


def smoothed_mle_check(
    result: FitResult,
    design: Design,
    table: ContingencyTable,
    penalty: PenaltyConfig | None = None,
    kkt_tol: float = 1e-7,
) -> SmoothedMLEReport:
    """Check ``<theta_h, U_h.T (n - m)> = N lam w_h ||theta_h||`` on active blocks."""
    penalty = penalty or result.penalty
    w = penalty.weights(design)
    theta = result.theta.values
    resid = table.counts - result.means.means
    score = design.rmatvec(resid)
    keep, inner, target, tols, gaps = [], [], [], [], []
    for i, s in enumerate(design.slices):
        nt = np.linalg.norm(theta[s])
        if nt == 0:
            continue
        keep.append(design.subsets[i])
        inner.append(theta[s] @ score[s])
        target.append(table.N * penalty.lam * w[i] * nt)
        tols.append(table.N * kkt_tol * nt)
        gaps.append(np.linalg.norm(score[s]))
    return SmoothedMLEReport(
        InteractionClass(tuple(keep)),
        np.array(inner),
        np.array(target),
        np.array(tols),
        np.array(gaps),
    )


def lambda_path(
    design: Design,
    table: ContingencyTable,
    block_weights,
    grid: Sequence[float],
    config: SolverConfig | None = None,
) -> list[FitResult]:
    """Warm-started fits along a descending grid of ``lam`` values."""
    grid = [float(v) for v in grid]
    if any(b > a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be descending")
    out: list[FitResult] = []
    theta = None
    for lam in grid:
        res = fit(design, table, PenaltyConfig(lam, block_weights), config, theta0=theta)
        out.append(res)
        theta = res.theta.values
    return out
