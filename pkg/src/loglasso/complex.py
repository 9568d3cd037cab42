"""Subset combinatorics for hierarchical log-linear models.

Factors are numbered 1..K. A subset of factors is a :class:`FactorSet`; a
model is a :class:`SimplicialComplex` given by its facets, and the set of
nonempty interaction terms a model contains is an :class:`InteractionClass`.

All subsets are kept in the canonical order: by cardinality first, then
lexicographically on the sorted members.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

MAX_FACTORS = 32

__all__ = [
    "FactorSet",
    "SimplicialComplex",
    "InteractionClass",
    "downward_closure",
    "maximal_elements",
    "complement_class",
    "interaction_graph",
    "all_subsets",
]


@dataclass(frozen=True)
class FactorSet:
    """A sorted, duplicate-free set of 1-based factor indices."""

    members: tuple[int, ...]

    def __post_init__(self) -> None:
        members = tuple(int(m) for m in self.members)
        if any(m < 1 or m > MAX_FACTORS for m in members):
            raise ValueError(f"factor indices must lie in 1..{MAX_FACTORS}: {members}")
        if list(members) != sorted(set(members)):
            raise ValueError(f"factor set members must be sorted and unique: {members}")
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, members: Iterable[int]) -> "FactorSet":
        return cls(tuple(sorted(set(int(m) for m in members))))

    @classmethod
    def from_mask(cls, mask: int) -> "FactorSet":
        return cls(tuple(i + 1 for i in range(MAX_FACTORS) if mask >> i & 1))

    @classmethod
    def parse(cls, key: str) -> "FactorSet":
        """Inverse of :attr:`key`; ``""`` is the empty set."""
        key = key.strip()
        if not key:
            return cls(())
        return cls.of(int(tok) for tok in key.split(","))

    @property
    def mask(self) -> int:
        out = 0
        for m in self.members:
            out |= 1 << (m - 1)
        return out

    @property
    def key(self) -> str:
        return ",".join(str(m) for m in self.members)

    @property
    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        return (len(self.members), self.members)

    def issubset(self, other: "FactorSet") -> bool:
        return self.mask & ~other.mask == 0

    def __lt__(self, other: "FactorSet") -> bool:
        return self.sort_key < other.sort_key

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.members)

    def __contains__(self, k: object) -> bool:
        return k in self.members

    def __repr__(self) -> str:
        return "{" + self.key + "}"


def _as_factor_set(s: FactorSet | Iterable[int]) -> FactorSet:
    return s if isinstance(s, FactorSet) else FactorSet.of(s)


def _canonical(sets: Iterable[FactorSet]) -> tuple[FactorSet, ...]:
    return tuple(sorted(set(sets), key=lambda s: s.sort_key))


@dataclass(frozen=True)
class InteractionClass:
    """A canonically ordered collection of nonempty factor sets.

    Classes built by :func:`downward_closure` are downward closed. Active sets
    produced by the estimator need not be, so closure is not enforced here;
    see :meth:`is_downward_closed`.
    """

    sets: tuple[FactorSet, ...]

    def __post_init__(self) -> None:
        sets = tuple(_as_factor_set(s) for s in self.sets)
        if any(len(s) == 0 for s in sets):
            raise ValueError("the empty set is never a member of an interaction class")
        if len(set(sets)) != len(sets):
            raise ValueError("duplicate subsets in interaction class")
        object.__setattr__(self, "sets", _canonical(sets))

    @classmethod
    def from_lists(cls, sets: Iterable[Iterable[int]]) -> "InteractionClass":
        return cls(tuple(FactorSet.of(s) for s in sets))

    def is_downward_closed(self) -> bool:
        members = set(self.sets)
        for h in self.sets:
            for r in range(1, len(h)):
                for sub in itertools.combinations(h.members, r):
                    if FactorSet(sub) not in members:
                        return False
        return True

    def max_factor(self) -> int:
        return max((s.members[-1] for s in self.sets), default=0)

    def to_lists(self) -> list[list[int]]:
        return [list(s.members) for s in self.sets]

    def __len__(self) -> int:
        return len(self.sets)

    def __iter__(self) -> Iterator[FactorSet]:
        return iter(self.sets)

    def __contains__(self, h: object) -> bool:
        if not isinstance(h, FactorSet):
            h = FactorSet.of(h)  # type: ignore[arg-type]
        return h in self.sets


@dataclass(frozen=True)
class SimplicialComplex:
    """A hierarchical log-linear model on factors 1..K, stored by its facets.

    An empty facet list is the uniform model (grand mean only).
    """

    K: int
    facets: tuple[FactorSet, ...]

    def __post_init__(self) -> None:
        if not 1 <= self.K <= MAX_FACTORS:
            raise ValueError(f"K must lie in 1..{MAX_FACTORS}, got {self.K}")
        facets = tuple(_as_factor_set(f) for f in self.facets)
        for f in facets:
            if len(f) == 0:
                raise ValueError("facets must be nonempty")
            if f.members[-1] > self.K:
                raise ValueError(f"facet {f!r} is not a subset of 1..{self.K}")
        facets = _canonical(facets)
        for a, b in itertools.permutations(facets, 2):
            if a.issubset(b):
                raise ValueError(f"facet {a!r} is contained in facet {b!r}")
        object.__setattr__(self, "facets", facets)

    @classmethod
    def from_lists(cls, K: int, facets: Iterable[Iterable[int]]) -> "SimplicialComplex":
        return cls(K, tuple(FactorSet.of(f) for f in facets))

    @classmethod
    def from_json(cls, K: int, text: str) -> "SimplicialComplex":
        return cls.from_lists(K, json.loads(text))

    def to_lists(self) -> list[list[int]]:
        return [list(f.members) for f in self.facets]

    def to_json(self) -> str:
        return json.dumps(self.to_lists(), separators=(",", ":"))

    def __len__(self) -> int:
        return len(self.facets)

    def __iter__(self) -> Iterator[FactorSet]:
        return iter(self.facets)


def all_subsets(K: int) -> InteractionClass:
    """Every nonempty subset of 1..K (the saturated class)."""
    if not 1 <= K <= MAX_FACTORS:
        raise ValueError(f"K must lie in 1..{MAX_FACTORS}, got {K}")
    return InteractionClass(
        tuple(FactorSet(c) for r in range(1, K + 1) for c in itertools.combinations(range(1, K + 1), r))
    )


def downward_closure(delta: SimplicialComplex) -> InteractionClass:
    """All nonempty subsets of the facets of ``delta``."""
    out: set[FactorSet] = set()
    for f in delta.facets:
        for r in range(1, len(f) + 1):
            out.update(FactorSet(c) for c in itertools.combinations(f.members, r))
    return InteractionClass(tuple(out))


def maximal_elements(
    H: InteractionClass | Sequence[Iterable[int]], K: int | None = None
) -> SimplicialComplex:
    """Inclusion-maximal members of ``H`` as a complex.

    ``H`` need not be downward closed. ``K`` defaults to the largest factor
    index that appears (or 1 for an empty class).
    """
    if not isinstance(H, InteractionClass):
        H = InteractionClass.from_lists(H)
    if K is None:
        K = max(H.max_factor(), 1)
    sets = H.sets
    facets = [
        h for h in sets if not any(h != g and h.issubset(g) for g in sets)
    ]
    return SimplicialComplex(K, tuple(facets))


def complement_class(H: InteractionClass, K: int) -> InteractionClass:
    """Nonempty subsets of 1..K that are not in ``H`` (the zero blocks)."""
    if H.max_factor() > K:
        raise ValueError(f"subset out of range: class uses factor {H.max_factor()} but K={K}")
    present = set(H.sets)
    return InteractionClass(tuple(h for h in all_subsets(K) if h not in present))


def interaction_graph(delta: SimplicialComplex) -> list[tuple[int, int]]:
    """Edges ``(i, j)``, ``i < j``, of pairs sharing a facet."""
    edges: set[tuple[int, int]] = set()
    for f in delta.facets:
        edges.update(itertools.combinations(f.members, 2))
    return sorted(edges)
