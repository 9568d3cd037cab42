"""Contrast bases and Kronecker design matrices for interaction subspaces.

Cells of an ``I_1 x ... x I_K`` table are linearly indexed with factor 1
varying slowest and factor K fastest (C order), which matches the factor
order of the Kronecker products below.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Iterable

import numpy as np

from .complex import (
    FactorSet,
    InteractionClass,
    SimplicialComplex,
    all_subsets,
    downward_closure,
)

MAX_DENSE_CELLS = 4096
# above this many cells matvecs use the Kronecker structure instead of the dense matrix
_STRUCTURED_CELLS = 512

__all__ = [
    "TableShape",
    "DesignBlock",
    "Design",
    "contrast_matrix",
    "block_matrix",
    "assemble_design",
    "saturated_design",
    "model_dimension",
    "projector",
    "block_dim",
]


@dataclass(frozen=True)
class TableShape:
    levels: tuple[int, ...]

    def __post_init__(self) -> None:
        levels = tuple(int(v) for v in self.levels)
        if not levels:
            raise ValueError("a table needs at least one factor")
        if any(v < 2 for v in levels):
            raise ValueError(f"every factor needs at least 2 levels, got {levels}")
        if len(levels) > 32:
            raise ValueError("at most 32 factors are supported")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def of(cls, levels: Iterable[int]) -> "TableShape":
        return cls(tuple(levels))

    @property
    def K(self) -> int:
        return len(self.levels)

    @property
    def I(self) -> int:
        return int(np.prod(self.levels, dtype=np.int64))

    def cell_index(self, cell: Iterable[int]) -> int:
        """Linear index of a 1-based cell ``(i_1, ..., i_K)``."""
        idx = tuple(int(c) - 1 for c in cell)
        return int(np.ravel_multi_index(idx, self.levels))

    def cell(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.unravel_index(index, self.levels))


def _check_dense(shape: TableShape) -> None:
    if shape.I > MAX_DENSE_CELLS:
        raise ValueError(
            f"table has {shape.I} cells; dense designs are limited to {MAX_DENSE_CELLS}"
        )


def block_dim(shape: TableShape, h: FactorSet) -> int:
    return int(np.prod([shape.levels[k - 1] - 1 for k in h], dtype=np.int64))


def contrast_matrix(levels: int) -> np.ndarray:
    """Bidiagonal ``levels x (levels-1)`` contrast basis: +1 on the diagonal, -1 below."""
    if levels < 2:
        raise ValueError(f"a factor needs at least 2 levels, got {levels}")
    Z = np.zeros((levels, levels - 1), dtype=np.int64)
    j = np.arange(levels - 1)
    Z[j, j] = 1
    Z[j + 1, j] = -1
    return Z


@dataclass(frozen=True)
class DesignBlock:
    subset: FactorSet
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def block_matrix(shape: TableShape, h: FactorSet | Iterable[int]) -> DesignBlock:
    """Kronecker product over factors of ``Z_k`` (k in h) or a column of ones."""
    if not isinstance(h, FactorSet):
        h = FactorSet.of(h)
    if len(h) == 0:
        raise ValueError("the empty subset (grand mean) has no design block")
    if h.members[-1] > shape.K:
        raise ValueError(f"subset {h!r} out of range for {shape.K} factors")
    _check_dense(shape)
    factors = [
        contrast_matrix(n) if k in h else np.ones((n, 1), dtype=np.int64)
        for k, n in enumerate(shape.levels, start=1)
    ]
    U = reduce(np.kron, factors)
    return DesignBlock(h, U)


def _z_apply(v: np.ndarray, axis: int) -> np.ndarray:
    # Z_k @ v along ``axis``: out[0]=v[0], out[j]=v[j]-v[j-1], out[-1]=-v[-1]
    pad_hi = [(0, 0)] * v.ndim
    pad_lo = [(0, 0)] * v.ndim
    pad_hi[axis] = (0, 1)
    pad_lo[axis] = (1, 0)
    return np.pad(v, pad_hi) - np.pad(v, pad_lo)


def _zt_apply(x: np.ndarray, axis: int) -> np.ndarray:
    # Z_k.T @ x along ``axis``: out[j] = x[j] - x[j+1]
    return -np.diff(x, axis=axis)


@dataclass(frozen=True)
class Design:
    """Concatenated design ``[U_h for h in cls]`` in canonical block order."""

    shape: TableShape
    cls: InteractionClass
    blocks: tuple[DesignBlock, ...]
    offsets: tuple[int, ...]

    @property
    def ncols(self) -> int:
        return self.offsets[-1] if self.blocks else 0

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.dim for b in self.blocks)

    @property
    def subsets(self) -> tuple[FactorSet, ...]:
        return self.cls.sets

    @cached_property
    def _index(self) -> dict[FactorSet, int]:
        return {b.subset: i for i, b in enumerate(self.blocks)}

    def position(self, h: FactorSet) -> int:
        return self._index[h]

    def slice(self, h: FactorSet | int) -> slice:
        i = h if isinstance(h, int) else self._index[h]
        return slice(self.offsets[i], self.offsets[i + 1])

    @cached_property
    def slices(self) -> tuple[slice, ...]:
        return tuple(self.slice(i) for i in range(len(self.blocks)))

    @cached_property
    def matrix(self) -> np.ndarray:
        """Dense float ``I x d`` matrix."""
        if not self.blocks:
            return np.zeros((self.shape.I, 0))
        return np.hstack([b.matrix for b in self.blocks]).astype(float)

    @cached_property
    def int_matrix(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros((self.shape.I, 0), dtype=np.int64)
        return np.hstack([b.matrix for b in self.blocks])

    def split(self, vec: np.ndarray) -> dict[FactorSet, np.ndarray]:
        vec = np.asarray(vec)
        return {b.subset: vec[s] for b, s in zip(self.blocks, self.slices)}

    def block_norms(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        return np.array([np.linalg.norm(vec[s]) for s in self.slices])

    @property
    def structured(self) -> bool:
        return self.shape.I > _STRUCTURED_CELLS

    def matvec(self, theta: np.ndarray) -> np.ndarray:
        """``U @ theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.structured:
            return self.kron_matvec(theta)
        return self.matrix @ theta

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """``U.T @ x``."""
        x = np.asarray(x, dtype=float)
        if self.structured:
            return self.kron_rmatvec(x)
        return self.matrix.T @ x

    def kron_matvec(self, theta: np.ndarray) -> np.ndarray:
        levels = self.shape.levels
        out = np.zeros(levels)
        for b, s in zip(self.blocks, self.slices):
            members = b.subset.members
            t = theta[s].reshape([levels[k - 1] - 1 for k in members])
            for ax in range(len(members)):
                t = _z_apply(t, ax)
            full = [1] * len(levels)
            for ax, k in enumerate(members):
                full[k - 1] = levels[k - 1]
            out += t.reshape(full)
        return out.reshape(-1)

    def kron_rmatvec(self, x: np.ndarray) -> np.ndarray:
        levels = self.shape.levels
        x = x.reshape(levels)
        parts = []
        for b in self.blocks:
            members = b.subset.members
            drop = tuple(k for k in range(len(levels)) if k + 1 not in members)
            t = x.sum(axis=drop) if drop else x
            for ax in range(len(members)):
                t = _zt_apply(t, ax)
            parts.append(t.reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)

    def sub_design(self, H: InteractionClass) -> "Design":
        """The design restricted to the blocks in ``H``, reusing block matrices."""
        blocks = tuple(self.blocks[self._index[h]] for h in H)
        return Design(self.shape, H, blocks, _offsets(blocks))


def _offsets(blocks: tuple[DesignBlock, ...]) -> tuple[int, ...]:
    return tuple(int(v) for v in np.concatenate([[0], np.cumsum([b.dim for b in blocks])]))


def assemble_design(shape: TableShape, H: InteractionClass) -> Design:
    _check_dense(shape)
    if H.max_factor() > shape.K:
        raise ValueError(f"interaction class uses factor {H.max_factor()} but table has {shape.K}")
    blocks = tuple(block_matrix(shape, h) for h in H)
    return Design(shape, H, blocks, _offsets(blocks))


def saturated_design(shape: TableShape) -> Design:
    return assemble_design(shape, all_subsets(shape.K))


def model_dimension(shape: TableShape, delta: SimplicialComplex) -> int:
    """Dimension of the model subspace, grand mean included."""
    return 1 + sum(block_dim(shape, h) for h in downward_closure(delta))


def projector(shape: TableShape, h: FactorSet | Iterable[int]) -> np.ndarray:
    """Orthogonal projector onto the interaction subspace of ``h``.

    Kronecker product of ``I - J/I_k`` for k in h and ``J/I_k`` otherwise;
    ``h`` empty gives the grand-mean projector.
    """
    if not isinstance(h, FactorSet):
        h = FactorSet.of(h)
    _check_dense(shape)
    factors = []
    for k, n in enumerate(shape.levels, start=1):
        J = np.full((n, n), 1.0 / n)
        factors.append(np.eye(n) - J if k in h else J)
    return reduce(np.kron, factors)
