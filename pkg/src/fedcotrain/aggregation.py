"""Thresholded pseudolabel voting and per-participant bundle assembly.

For each category the coordinator counts, at every public-dataset index, how
many participants voted that category, and admits the index when the vote
fraction among the category's owners strictly exceeds the threshold ``alpha``.
The strict inequality means ``alpha=0`` admits any index with a single vote
and ``alpha=1`` admits nothing. The weighted variant replaces both counts with
sums of per-participant credibility weights; unit weights reproduce the
unweighted result exactly.

A participant's bundle is the restriction of the admitted index sets to its
own label space, with any index claimed by two or more of those sets dropped
from all of them so the bundle never carries contradictory labels.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import LabelSpace


class AggregationError(ValueError):
    """Malformed votes, weights, or threshold."""


@dataclass(frozen=True)
class PseudolabelSet:
    """Admitted public-dataset indices for one category."""

    category: int
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx):
            raise AggregationError("indices must be non-negative")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise AggregationError("indices must be strictly ascending")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "category", int(self.category))

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class PseudolabelBundle:
    """Conflict-free pseudolabel sets restricted to one participant's space."""

    owner: int
    entries: tuple[PseudolabelSet, ...]

    def __post_init__(self):
        cats = [e.category for e in self.entries]
        if any(b <= a for a, b in zip(cats, cats[1:])):
            raise AggregationError("bundle entries must be sorted by category")
        seen: set[int] = set()
        for entry in self.entries:
            overlap = seen.intersection(entry.indices)
            if overlap:
                raise AggregationError(
                    f"bundle entries overlap on indices {sorted(overlap)[:5]}"
                )
            seen.update(entry.indices)

    def __len__(self) -> int:
        return sum(len(e) for e in self.entries)

    @classmethod
    def empty(cls, owner: int) -> "PseudolabelBundle":
        return cls(owner=owner, entries=())


@dataclass(frozen=True)
class CredibilityWeights:
    """Per-participant vote weights; 1.0 everywhere matches unweighted voting."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise AggregationError("weights must be non-empty")
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise AggregationError("weights must be finite and non-negative")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def uniform(cls, n: int) -> "CredibilityWeights":
        return cls(values=(1.0,) * n)


def _validate_votes(predictions: Sequence[np.ndarray],
                    label_spaces: Sequence[LabelSpace],
                    alpha: float, size: int) -> np.ndarray:
    if len(predictions) != len(label_spaces):
        raise AggregationError(
            f"{len(predictions)} prediction vectors for {len(label_spaces)} label spaces"
        )
    if len(predictions) == 0:
        raise AggregationError("need at least one participant")
    if not 0.0 <= alpha <= 1.0:
        raise AggregationError(f"alpha must lie in [0, 1], got {alpha}")
    if size < 1:
        raise AggregationError("public dataset size must be >= 1")
    rows = []
    for i, (vector, space) in enumerate(zip(predictions, label_spaces)):
        row = np.asarray(vector, dtype=np.int64)
        if row.ndim != 1 or len(row) != size:
            raise AggregationError(
                f"participant {i}: prediction vector length {row.shape} != {size}"
            )
        if not np.isin(row, np.fromiter(space, dtype=np.int64)).all():
            bad = row[~np.isin(row, np.fromiter(space, dtype=np.int64))][0]
            raise AggregationError(
                f"participant {i}: predicted category {bad} outside declared label space"
            )
        rows.append(row)
    return np.vstack(rows)


def category_union(label_spaces: Sequence[LabelSpace]) -> list[int]:
    union: set[int] = set()
    for space in label_spaces:
        union.update(space)
    return sorted(union)


def aggregate(predictions: Sequence[np.ndarray], label_spaces: Sequence[LabelSpace],
              alpha: float, size: int) -> dict[int, PseudolabelSet]:
    """Vote-count every category and admit indices by the strict threshold.

    Returns one PseudolabelSet per category in the union of the label spaces
    (possibly empty). An index is admitted for a category when
    votes / owners > alpha, with owners counting every participant whose
    space contains the category.
    """
    matrix = _validate_votes(predictions, label_spaces, alpha, size)
    result: dict[int, PseudolabelSet] = {}
    for category in category_union(label_spaces):
        owners = sum(1 for space in label_spaces if category in space)
        votes = (matrix == category).sum(axis=0)
        admitted = np.flatnonzero(votes / owners > alpha)
        result[category] = PseudolabelSet(category, tuple(admitted.tolist()))
    return result


def aggregate_weighted(predictions: Sequence[np.ndarray],
                       label_spaces: Sequence[LabelSpace],
                       weights: CredibilityWeights, alpha: float,
                       size: int) -> dict[int, PseudolabelSet]:
    """Weighted variant: vote counts and owner totals sum credibility weights.

    A zero-weight participant still counts as an owner but contributes no vote
    mass; a category whose owners all have zero weight is rejected.
    """
    matrix = _validate_votes(predictions, label_spaces, alpha, size)
    if len(weights) != len(label_spaces):
        raise AggregationError(
            f"{len(weights)} weights for {len(label_spaces)} participants"
        )
    values = weights.values
    result: dict[int, PseudolabelSet] = {}
    for category in category_union(label_spaces):
        # Sequential accumulation in participant order keeps float sums
        # reproducible regardless of how callers parallelize around this.
        total = 0.0
        for i, space in enumerate(label_spaces):
            if category in space:
                total += values[i]
        if total == 0.0:
            raise AggregationError(
                f"category {category}: every owner has zero credibility weight"
            )
        mass = np.zeros(size, dtype=np.float64)
        for i in range(len(label_spaces)):
            mass += values[i] * (matrix[i] == category)
        admitted = np.flatnonzero(mass / total > alpha)
        result[category] = PseudolabelSet(category, tuple(admitted.tolist()))
    return result


def remove_global_conflicts(
        pseudo_sets: Mapping[int, PseudolabelSet]) -> dict[int, PseudolabelSet]:
    """Drop every index claimed by two or more categories, across all sets."""
    counts = Counter()
    for entry in pseudo_sets.values():
        counts.update(entry.indices)
    conflicted = {i for i, c in counts.items() if c >= 2}
    return {
        c: PseudolabelSet(c, tuple(i for i in s.indices if i not in conflicted))
        for c, s in pseudo_sets.items()
    }


def build_bundle(pseudo_sets: Mapping[int, PseudolabelSet], label_space: LabelSpace,
                 owner: int) -> PseudolabelBundle:
    """Restrict the admitted sets to one label space and drop conflicts.

    Conflict removal is scoped to the restricted sets only: an index shared
    with a category outside ``label_space`` is kept, because the owner never
    sees that competing claim.
    """
    restricted = []
    for category in sorted(label_space):
        entry = pseudo_sets.get(category)
        restricted.append(entry if entry is not None else PseudolabelSet(category, ()))
    counts = Counter()
    for entry in restricted:
        counts.update(entry.indices)
    conflicted = {i for i, c in counts.items() if c >= 2}
    entries = tuple(
        PseudolabelSet(e.category, tuple(i for i in e.indices if i not in conflicted))
        for e in restricted
    )
    return PseudolabelBundle(owner=owner, entries=entries)
