"""Multinomial log-linear exponential family.

Log-likelihood values omit the data-only constant ``log N! - sum(log n_i!)``.
Throughout, ``theta`` is the flat coefficient vector laid out by a
:class:`~loglasso.design.Design`; :class:`BlockedVector` wraps it with block
labels for I/O and reporting.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .complex import FactorSet, InteractionClass
from .design import Design, TableShape

logger = logging.getLogger(__name__)

__all__ = [
    "ContingencyTable",
    "BlockedVector",
    "CellDistribution",
    "FisherInfo",
    "MLEConfig",
    "MLEResult",
    "MLEDivergenceError",
    "mean_map",
    "log_likelihood",
    "gradient",
    "hessian",
    "sufficient_covariance",
    "fisher_info",
    "sample_table",
    "fit_mle",
    "load_table",
    "save_table",
]


@dataclass(frozen=True)
class ContingencyTable:
    shape: TableShape
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            counts = counts.reshape(-1)
        if counts.size != self.shape.I:
            raise ValueError(f"expected {self.shape.I} counts, got {counts.size}")
        if not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"shape": list(self.shape.levels), "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ContingencyTable":
        return cls(TableShape.of(d["shape"]), np.asarray(d["counts"]))


def load_table(path: str | PathLike) -> ContingencyTable:
    with open(path) as fh:
        return ContingencyTable.from_dict(json.load(fh))


def save_table(table: ContingencyTable, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(table.to_dict(), fh)


@dataclass(frozen=True)
class BlockedVector:
    """A coefficient vector labelled by the interaction blocks of a design."""

    cls: InteractionClass
    dims: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.dims) != len(self.cls.sets):
            raise ValueError("one dimension per block is required")
        if values.size != sum(self.dims):
            raise ValueError(f"expected {sum(self.dims)} values, got {values.size}")
        object.__setattr__(self, "values", values)

    @classmethod
    def of(cls, design: Design, values: np.ndarray | None = None) -> "BlockedVector":
        if values is None:
            values = np.zeros(design.ncols)
        return cls(design.cls, design.dims, values)

    @classmethod
    def from_mapping(cls, design: Design, mapping: Mapping[str, Sequence[float]]) -> "BlockedVector":
        """Build from ``{"1": [...], "1,2": [...]}``; absent blocks are zero."""
        values = np.zeros(design.ncols)
        for key, block in mapping.items():
            h = FactorSet.parse(key)
            try:
                s = design.slice(h)
            except KeyError:
                raise ValueError(f"block {key!r} is not part of the design") from None
            block = np.asarray(block, dtype=float).reshape(-1)
            if block.size != s.stop - s.start:
                raise ValueError(f"block {key!r} needs {s.stop - s.start} values, got {block.size}")
            values[s] = block
        return cls.of(design, values)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    def block(self, h: FactorSet) -> np.ndarray:
        i = self.cls.sets.index(h)
        off = self.offsets
        return self.values[off[i]:off[i + 1]]

    def blocks(self) -> dict[FactorSet, np.ndarray]:
        off = self.offsets
        return {h: self.values[off[i]:off[i + 1]] for i, h in enumerate(self.cls.sets)}

    def norms(self) -> dict[FactorSet, float]:
        return {h: float(np.linalg.norm(v)) for h, v in self.blocks().items()}

    def to_mapping(self) -> dict[str, list[float]]:
        return {h.key: v.tolist() for h, v in self.blocks().items()}

    def restrict(self, design: Design) -> "BlockedVector":
        """Keep only the blocks of ``design`` (which must all be present here)."""
        b = self.blocks()
        vals = np.concatenate([b[h] for h in design.cls]) if len(design.cls) else np.zeros(0)
        return BlockedVector.of(design, vals)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class CellDistribution:
    probs: np.ndarray
    N: float = 1.0
    shape: TableShape | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise ValueError("cell probabilities must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12 * p.size:
            raise ValueError(f"cell probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def means(self) -> np.ndarray:
        return self.N * self.probs


@dataclass(frozen=True)
class FisherInfo:
    matrix: np.ndarray
    l_min: float
    l_max: float


def _flat(theta) -> np.ndarray:
    return np.asarray(theta, dtype=float).reshape(-1)


def _log_partition(design: Design, theta: np.ndarray) -> tuple[np.ndarray, float]:
    eta = design.matvec(theta)
    c = eta.max()
    b = np.exp(eta - c)
    z = b.sum()
    return b / z, c + np.log(z)


def _probs(design: Design, theta) -> np.ndarray:
    theta = _flat(theta)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return _log_partition(design, theta)[0]


def mean_map(design: Design, theta, N: float) -> CellDistribution:
    """Cell probabilities ``softmax(U theta)`` and means ``N * probs``."""
    p = _probs(design, theta)
    # underflow can produce exact zeros for extreme theta; keep strictly positive
    p = np.maximum(p, np.finfo(float).tiny)
    return CellDistribution(p / p.sum(), N, design.shape)


def log_likelihood(design: Design, theta, table: ContingencyTable) -> float:
    theta = _flat(theta)
    _, logz = _log_partition(design, theta)
    return float(design.rmatvec(table.counts) @ theta - table.N * logz)


def gradient(design: Design, theta, table: ContingencyTable) -> np.ndarray:
    """``U.T (n - m)`` as a flat vector; use ``design.split`` for blocks."""
    p = _probs(design, theta)
    return design.rmatvec(table.counts - table.N * p)


def sufficient_covariance(design: Design, probs: np.ndarray, N: float) -> np.ndarray:
    """``U.T (D_m - m m.T / N) U`` with ``m = N * probs``."""
    U = design.matrix
    p = np.asarray(probs, dtype=float)
    Up = U.T @ p
    return N * ((U.T * p) @ U - np.outer(Up, Up))


def hessian(design: Design, theta, N: float) -> np.ndarray:
    return -sufficient_covariance(design, _probs(design, theta), N)


def fisher_info(design: Design, probs) -> FisherInfo:
    p = np.asarray(probs.probs if isinstance(probs, CellDistribution) else probs, dtype=float)
    if np.any(p <= 0):
        raise ValueError("Fisher information requires strictly positive cell probabilities")
    if abs(p.sum() - 1.0) > 1e-10:
        raise ValueError("cell probabilities must sum to 1")
    F = sufficient_covariance(design, p, 1.0)
    F = 0.5 * (F + F.T)
    if F.size == 0:
        return FisherInfo(F, float("nan"), float("nan"))
    ev = np.linalg.eigvalsh(F)
    return FisherInfo(F, float(ev[0]), float(ev[-1]))


def sample_table(
    dist: CellDistribution, N: int, seed=None, shape: TableShape | None = None
) -> ContingencyTable:
    """Multinomial(N, probs) draw; ``seed`` is anything ``default_rng`` accepts."""
    shape = shape or dist.shape
    if shape is None:
        shape = TableShape((dist.probs.size,))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = dist.probs
    counts = rng.multinomial(int(N), p / p.sum())
    return ContingencyTable(shape, counts)


@dataclass
class MLEConfig:
    tol: float = 1e-10
    max_iter: int = 200
    divergence_bound: float = 30.0
    max_halvings: int = 50
    step_tol: float = 1e-7
    # information eigenvalue ratio below which a "converged" point is taken to
    # sit at infinity numerically (fitted means underflowed)
    flat_rcond: float = 1e-12


class MLEDivergenceError(RuntimeError):
    """The Newton iterates left every bounded set: the MLE does not exist."""

    def __init__(self, message: str, theta: np.ndarray):
        super().__init__(message)
        self.theta = theta


@dataclass
class MLEResult:
    theta: BlockedVector
    status: str  # "converged" | "diverged" | "max_iter" | "stalled"
    iterations: int
    loglik: float
    grad_inf: float
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def raise_for_status(self) -> "MLEResult":
        if self.status == "diverged":
            raise MLEDivergenceError(
                f"MLE does not exist: |theta|_inf exceeded the divergence bound after "
                f"{self.iterations} iterations",
                self.theta.values,
            )
        if self.status != "converged":
            raise RuntimeError(f"Newton solver did not converge ({self.status})")
        return self


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    # H is the positive (semi)definite negative Hessian
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


def fit_mle(
    design: Design,
    table: ContingencyTable,
    config: MLEConfig | None = None,
    theta0: np.ndarray | None = None,
) -> MLEResult:
    """Maximum likelihood under the model spanned by ``design``.

    Damped Newton: the full step is halved until the log-likelihood does not
    decrease. Convergence requires ``max|grad| / N <= tol`` together with a
    small Newton step. When the MLE does not exist the iterates drift off to
    infinity; this is reported as ``status == "diverged"`` once
    ``|theta|_inf`` passes ``config.divergence_bound``, or when the iterates
    stop at a point whose information matrix is numerically singular: there
    the fitted means of some cells have underflowed and the likelihood is flat
    to rounding along an escape direction.
    """
    cfg = config or MLEConfig()
    N = max(table.N, 1)
    theta = np.zeros(design.ncols) if theta0 is None else _flat(theta0).copy()
    ll = log_likelihood(design, theta, table)
    trace = [ll]
    status = "max_iter"
    it = 0
    g = gradient(design, theta, table)
    for it in range(1, cfg.max_iter + 1):
        H = -hessian(design, theta, table.N)
        step = _newton_direction(H, g)
        t = 1.0
        for _ in range(cfg.max_halvings):
            cand = theta + t * step
            ll_c = log_likelihood(design, cand, table)
            if np.isfinite(ll_c) and ll_c >= ll:
                break
            t *= 0.5
        else:
            status = "stalled"
            break
        theta, ll = cand, ll_c
        trace.append(ll)
        g = gradient(design, theta, table)
        if np.max(np.abs(theta), initial=0.0) > cfg.divergence_bound:
            status = "diverged"
            break
        if np.max(np.abs(g), initial=0.0) / N <= cfg.tol and np.max(np.abs(t * step), initial=0.0) <= cfg.step_tol:
            status = "converged"
            break
    if status == "stalled" and np.max(np.abs(g), initial=0.0) / N <= cfg.tol:
        status = "converged"
    if status == "converged" and design.ncols:
        ev = np.linalg.eigvalsh(-hessian(design, theta, N))
        if ev[0] <= cfg.flat_rcond * ev[-1]:
            status = "diverged"
    return MLEResult(
        theta=BlockedVector.of(design, theta),
        status=status,
        iterations=it,
        loglik=ll,
        grad_inf=float(np.max(np.abs(g), initial=0.0)),
        loglik_trace=trace,
    )
