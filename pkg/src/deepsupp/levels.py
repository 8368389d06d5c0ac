"""Support level containers shared by every detector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Levels closer than this relative distance are merged into one.
LEVEL_MERGE_TOL = 0.001


@dataclass(frozen=True)
class SupportLevel:
    price: float
    cluster_id: int = -1
    member_count: int = 1
    method: str = ""

    def to_dict(self) -> dict:
        return {
            "price": float(self.price),
            "cluster_id": int(self.cluster_id),
            "member_count": int(self.member_count),
        }


@dataclass(frozen=True)
class SupportLevelSet:
    """Support levels sorted strictly ascending by price."""

    ticker: str
    method: str
    levels: tuple[SupportLevel, ...] = field(default_factory=tuple)

    def __post_init__(self):
        prices = [lvl.price for lvl in self.levels]
        if any(not np.isfinite(p) for p in prices):
            raise ValueError("support level prices must be finite")
        if any(b <= a for a, b in zip(prices, prices[1:])):
            raise ValueError("support levels must be sorted strictly ascending")
        if any(lvl.member_count < 1 for lvl in self.levels):
            raise ValueError("member_count must be >= 1")

    @classmethod
    def from_prices(
        cls,
        ticker: str,
        method: str,
        prices: Iterable[float],
        merge_tol: float = LEVEL_MERGE_TOL,
    ) -> "SupportLevelSet":
        """Build a set from bare prices, merging near-duplicates to their median."""
        groups = group_close_values(list(prices), merge_tol)
        levels = tuple(
            SupportLevel(price=float(np.median(g)), cluster_id=i, member_count=len(g), method=method)
            for i, g in enumerate(groups)
        )
        return cls(ticker=ticker, method=method, levels=levels)

    @property
    def prices(self) -> np.ndarray:
        return np.array([lvl.price for lvl in self.levels], dtype=float)

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def in_range(self, lo: float, hi: float) -> bool:
        return all(lo <= lvl.price <= hi for lvl in self.levels)

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "method": self.method,
            "levels": [lvl.to_dict() for lvl in self.levels],
        }


def group_close_values(values: Sequence[float], rel_tol: float) -> list[list[float]]:
    """Group sorted values whose distance to the group's first member is within rel_tol.

    The anchor is the smallest value of each group, so groups never chain
    wider than ``rel_tol``.
    """
    groups: list[list[float]] = []
    for v in sorted(float(x) for x in values):
        if groups and (v - groups[-1][0]) <= rel_tol * abs(groups[-1][0]):
            groups[-1].append(v)
        else:
            groups.append([v])
    # medians of adjacent groups can still land within tolerance when groups are tight
    merged = True
    while merged and len(groups) > 1:
        merged = False
        for i in range(len(groups) - 1):
            a, b = float(np.median(groups[i])), float(np.median(groups[i + 1]))
            if b - a <= rel_tol * abs(a):
                groups[i] = sorted(groups[i] + groups[i + 1])
                del groups[i + 1]
                merged = True
                break
    return groups
