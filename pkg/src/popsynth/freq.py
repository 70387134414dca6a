"""Dense relative-frequency tables over attribute combinations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    """Relative frequencies over the full combination space of ``attrs``.

    ``probs`` has one axis per attribute, in ``attrs`` order; absent
    combinations are stored as zeros.
    """

    attrs: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != len(self.attrs):
            raise ValueError(f"table has {probs.ndim} axes for {len(self.attrs)} attributes")
        object.__setattr__(self, "attrs", tuple(self.attrs))
        object.__setattr__(self, "probs", probs)

    @property
    def cards(self) -> tuple[int, ...]:
        return self.probs.shape

    @property
    def cell_count(self) -> int:
        return int(self.probs.size)

    def __getitem__(self, combo) -> float:
        return float(self.probs[tuple(combo)] if isinstance(combo, (tuple, list)) else self.probs[combo])

    def marginalize(self, keep: Sequence[str]) -> "FrequencyTable":
        keep = tuple(keep)
        for a in keep:
            if a not in self.attrs:
                raise KeyError(f"attribute {a!r} not in table")
        drop = tuple(i for i, a in enumerate(self.attrs) if a not in keep)
        p = self.probs.sum(axis=drop) if drop else self.probs
        remaining = [a for a in self.attrs if a in keep]
        order = [remaining.index(a) for a in keep]
        return FrequencyTable(keep, np.transpose(p, order))

    def total(self) -> float:
        return float(self.probs.sum())


def from_counts(attrs: Sequence[str], cards: Sequence[int], codes: np.ndarray,
                weights: np.ndarray | None = None) -> FrequencyTable:
    """Weighted relative frequencies of integer-coded rows ``codes`` (n x len(attrs))."""
    cards = tuple(int(c) for c in cards)
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes[:, None]
    if codes.shape[0] == 0:
        raise ValueError("no rows to count")
    flat = np.ravel_multi_index(tuple(codes.T), cards) if cards else np.zeros(len(codes), int)
    counts = np.bincount(flat, weights=weights, minlength=int(np.prod(cards)))
    total = counts.sum()
    if total <= 0:
        raise ValueError("total weight is zero")
    return FrequencyTable(tuple(attrs), (counts / total).reshape(cards))
