"""Diagnostics for the large-sample behaviour of the group-lasso estimator.

Rate conditions (``d = o(N)`` and friends) cannot be judged at a single
sample size. :func:`condition_report` therefore returns the ratios involved
so that a caller can follow their trend over a ladder of ``N``; the only
comparison made here is of the irreducibility norms against their bound.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .complex import InteractionClass, complement_class
from .design import Design
from .glasso import PenaltyConfig
from .model import BlockedVector, CellDistribution, fisher_info, sufficient_covariance

__all__ = [
    "CltStatistic",
    "CltStandardizer",
    "ConditionReport",
    "eta0",
    "j0_matrix",
    "clt_statistic",
    "inv_sqrt_psd",
    "msc2_norms",
    "addendum_norms",
    "condition_report",
]

EIG_FLOOR = 1e-12


class SingularFisherError(np.linalg.LinAlgError):
    def __init__(self, message: str, l_min: float):
        super().__init__(message)
        self.l_min = l_min


def _values(theta) -> np.ndarray:
    return np.asarray(theta.values if isinstance(theta, BlockedVector) else theta, dtype=float)


def _probs(pi) -> np.ndarray:
    return np.asarray(pi.probs if isinstance(pi, CellDistribution) else pi, dtype=float)


def _block_units(design: Design, theta: np.ndarray):
    for h, s in zip(design.subsets, design.slices):
        th = theta[s]
        nt = np.linalg.norm(th)
        if nt == 0:
            raise ValueError(f"block {h!r} of the true parameter is zero")
        yield s, th / nt, nt


def eta0(design: Design, theta0, penalty: PenaltyConfig) -> np.ndarray:
    """Penalty gradient at the truth: block h is ``w_h * theta_h / ||theta_h||``."""
    theta0 = _values(theta0)
    w = penalty.weights(design)
    out = np.empty_like(theta0)
    for (s, u, _), wh in zip(_block_units(design, theta0), w):
        out[s] = wh * u
    return out


def j0_matrix(design: Design, theta0, penalty: PenaltyConfig) -> np.ndarray:
    """Block-diagonal penalty Hessian ``(w_h / ||theta_h||) (I - u u.T)`` at the truth."""
    theta0 = _values(theta0)
    w = penalty.weights(design)
    J = np.zeros((theta0.size, theta0.size))
    for (s, u, nt), wh in zip(_block_units(design, theta0), w):
        J[s, s] = (wh / nt) * (np.eye(u.size) - np.outer(u, u))
    return J


def inv_sqrt_psd(F: np.ndarray, floor: float = EIG_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """``F^{-1/2}`` and ``F^{1/2}`` by symmetric eigendecomposition.

    Eigenvalues below ``floor * l_max`` are treated as zero and raise.
    """
    F = 0.5 * (F + F.T)
    ev, V = np.linalg.eigh(F)
    if ev.size and ev[0] <= floor * ev[-1]:
        raise SingularFisherError(f"Fisher information is singular (l_min = {ev[0]:.3e})", float(ev[0]))
    return (V / np.sqrt(ev)) @ V.T, (V * np.sqrt(ev)) @ V.T


@dataclass
class CltStatistic:
    X: np.ndarray
    J0: np.ndarray
    eta0: np.ndarray
    F_inv_sqrt: np.ndarray

    def project(self, C: np.ndarray) -> np.ndarray:
        """``C @ X`` for a ``k x d`` matrix of linear functionals."""
        return np.asarray(C, dtype=float) @ self.X


class CltStandardizer:
    """Precomputed pieces of the bias-corrected, standardized estimator.

    Setting this up once per (design, truth, penalty) and calling it on many
    estimates avoids repeating the eigendecomposition in simulations.
    """

    def __init__(self, design: Design, theta0, pi0, penalty: PenaltyConfig):
        self.design = design
        self.theta0 = _values(theta0)
        self.F = fisher_info(design, _probs(pi0)).matrix
        self.F_inv_sqrt, _ = inv_sqrt_psd(self.F)
        self.J0 = j0_matrix(design, self.theta0, penalty)
        self.eta0 = eta0(design, self.theta0, penalty)

    def __call__(self, theta_hat, N: float, lam: float) -> CltStatistic:
        diff = _values(theta_hat) - self.theta0
        inner = (self.F + lam * self.J0) @ diff + lam * self.eta0
        X = np.sqrt(N) * (self.F_inv_sqrt @ inner)
        return CltStatistic(X, self.J0, self.eta0, self.F_inv_sqrt)


def clt_statistic(
    theta_hat,
    theta0,
    design: Design,
    pi0,
    N: float,
    lam: float,
    penalty: PenaltyConfig,
) -> CltStatistic:
    """``sqrt(N) F^{-1/2} ((F + lam J0)(theta_hat - theta0) + lam eta0)``.

    ``design`` spans the true interaction class only, and ``theta_hat`` is the
    estimate restricted to those blocks. ``penalty.lam`` is ignored in favour
    of ``lam``; only the block weights are used.
    """
    return CltStandardizer(design, theta0, pi0, penalty)(theta_hat, N, lam)


def _cov(design: Design, pi: np.ndarray, N: float) -> np.ndarray:
    return sufficient_covariance(design, pi, N)


def _cross_cov(Ua: np.ndarray, Ub: np.ndarray, pi: np.ndarray, N: float) -> np.ndarray:
    # Ua.T (D_m - m m.T / N) Ub with m = N pi
    return N * ((Ua.T * pi) @ Ub - np.outer(Ua.T @ pi, Ub.T @ pi))


@dataclass
class IrreducibilityReport:
    per_block: dict[str, float]
    W_norm: float
    bound: float

    @property
    def satisfied(self) -> bool:
        return all(v < self.bound for v in self.per_block.values())


def msc2_norms(
    design: Design,
    pi0,
    H: InteractionClass,
    Hc: InteractionClass | None = None,
    N: float = 1.0,
    eps: float = 0.1,
) -> IrreducibilityReport:
    """Spectral norms ``||U_w.T C U_H Sigma_H^{-1}||`` for each zero block ``w``.

    ``design`` must contain every block of ``H`` and ``Hc`` (normally the
    saturated design). ``Hc`` defaults to the complement of ``H``.
    """
    pi = _probs(pi0)
    if Hc is None:
        Hc = complement_class(H, design.shape.K)
    if len(Hc) == 0:
        return IrreducibilityReport({}, 0.0, float("inf"))
    dH = design.sub_design(H)
    Sigma = _cov(dH, pi, N)
    ev = np.linalg.eigvalsh(Sigma)
    if ev[0] <= EIG_FLOOR * ev[-1]:
        raise SingularFisherError("Sigma_H is singular", float(ev[0]))
    dC = design.sub_design(Hc)
    W = np.linalg.solve(Sigma, _cross_cov(dH.matrix, dC.matrix, pi, N)).T
    per = {}
    for h, s in zip(dC.subsets, dC.slices):
        per[h.key] = float(np.linalg.norm(W[s], 2))
    return IrreducibilityReport(per, float(np.linalg.norm(W, 2)), (1.0 - eps) / len(Hc))


def addendum_norms(design: Design, pi0, H: InteractionClass, eps: float = 0.1) -> IrreducibilityReport:
    """Per-block version: ``||U_{H\\h}.T C U_h (U_h.T C U_h)^{-1}||`` for ``h`` in ``H``."""
    pi = _probs(pi0)
    dH = design.sub_design(H)
    U = dH.matrix
    per = {}
    worst = 0.0
    for h, s in zip(dH.subsets, dH.slices):
        Uh = U[:, s]
        G = _cross_cov(Uh, Uh, pi, 1.0)
        ev = np.linalg.eigvalsh(G)
        if ev[0] <= EIG_FLOOR * max(ev[-1], 1.0):
            raise SingularFisherError(f"block Gram matrix of {h!r} is singular", float(ev[0]))
        rest = np.ones(U.shape[1], dtype=bool)
        rest[s] = False
        if not rest.any():
            per[h.key] = 0.0
            continue
        M = np.linalg.solve(G, _cross_cov(Uh, U[:, rest], pi, 1.0)).T
        per[h.key] = float(np.linalg.norm(M, 2))
        worst = max(worst, per[h.key])
    return IrreducibilityReport(per, worst, (1.0 - eps) / max(len(H), 1))


@dataclass
class ConditionReport:
    """Scalar diagnostics at one sample size.

    Entries other than ``msc2_satisfied`` and ``addendum_satisfied`` are
    rate quantities: track them across increasing ``N`` rather than reading
    any single value as a verdict. ``None`` marks a quantity that is not
    applicable (no zero blocks).
    """

    d_H: int
    N: float
    d_over_N: float
    l_min: float
    l_max: float
    sqrt_lmax_over_lmin: float
    alpha: float
    nc4_ratio: float
    msc1: float
    msc2_max: float | None
    msc2_W_norm: float | None
    msc2_bound: float | None
    msc2_satisfied: bool | None
    addendum_max: float
    addendum_bound: float
    addendum_satisfied: bool
    msc3: float | None
    msc4_max: float | None
    clt_ratios: dict[str, float] = field(default_factory=dict)
    max_pi: float = 0.0
    note: str = "rate quantities; compare trends across N, not single values"

    def to_dict(self) -> dict:
        return asdict(self)


def condition_report(
    design: Design,
    pi0,
    theta0,
    N: float,
    penalty: PenaltyConfig,
    H: InteractionClass | None = None,
    eps: float = 0.1,
) -> ConditionReport:
    """Evaluate the consistency and CLT conditions at the truth.

    ``design`` is the saturated design and ``theta0`` a parameter on it; the
    true class ``H`` defaults to the nonzero blocks of ``theta0``.
    """
    pi = _probs(pi0)
    theta0 = _values(theta0)
    norms = design.block_norms(theta0)
    if H is None:
        H = InteractionClass(tuple(h for h, n in zip(design.subsets, norms) if n > 0))
    Hc = complement_class(H, design.shape.K)
    dH = design.sub_design(H)
    lam = penalty.lam
    wH = penalty.weights(dH)
    d = dH.ncols
    fi = fisher_info(dH, pi)
    alpha = float(min((norms[design.position(h)] for h in H), default=float("nan")))
    root = np.sqrt(d / N)
    nc4 = lam * wH.sum() / root if d else float("nan")
    msc1 = (root + lam * np.sqrt(np.sum(wH**2))) / alpha if d else float("nan")
    msc2 = msc2_norms(design, pi, H, Hc, N, eps) if len(H) else None
    add = addendum_norms(design, pi, H, eps) if len(H) else IrreducibilityReport({}, 0.0, 1.0 - eps)
    if len(Hc):
        dC = design.sub_design(Hc)
        wC = penalty.weights(dC)
        msc3 = len(H) * (wH.max() if len(H) else 0.0) / (len(Hc) * wC.min())
        msc4 = float(np.max(np.sqrt(np.asarray(dC.dims, dtype=float)) / (np.sqrt(N) * lam * wC))) if lam > 0 else float("inf")
    else:
        msc3 = msc4 = None
    has_c = msc2 is not None and len(Hc) > 0
    return ConditionReport(
        d_H=d,
        N=float(N),
        d_over_N=d / N,
        l_min=fi.l_min,
        l_max=fi.l_max,
        sqrt_lmax_over_lmin=float(np.sqrt(fi.l_max) / fi.l_min) if d else float("nan"),
        alpha=alpha,
        nc4_ratio=float(nc4),
        msc1=float(msc1),
        msc2_max=max(msc2.per_block.values()) if has_c else None,
        msc2_W_norm=msc2.W_norm if has_c else None,
        msc2_bound=msc2.bound if has_c else None,
        msc2_satisfied=msc2.satisfied if has_c else None,
        addendum_max=add.W_norm,
        addendum_bound=add.bound,
        addendum_satisfied=all(v <= add.bound for v in add.per_block.values()),
        msc3=None if msc3 is None else float(msc3),
        msc4_max=msc4,
        clt_ratios={
            "d_over_sqrtN": d / np.sqrt(N),
            "d^3.5_over_N": d**3.5 / N,
            "d^3_over_N": d**3 / N,
            "maxpi_times_sqrt_Nd": float(pi.max() * np.sqrt(N * d)),
        },
        max_pi=float(pi.max()),
    )
