"""Ranking metrics: AP, mAP, Recall@k and mean rank (ranks are 1-based)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


@dataclass(frozen=True)
class LabeledRanking:
    """Binary relevance flags listed in rank order."""

    relevance: tuple[bool, ...]
    ids: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "relevance", tuple(bool(r) for r in self.relevance))
        if not self.relevance:
            raise ValueError("a ranking needs at least one item")
        if self.ids is not None and len(self.ids) != len(self.relevance):
            raise ValueError("ids and relevance differ in length")

    @classmethod
    def from_rank(cls, rank: int, n: int) -> "LabeledRanking":
        """Ranking of ``n`` items whose single correct item sits at ``rank``."""
        if not 1 <= rank <= n:
            raise ValueError(f"rank {rank} outside 1..{n}")
        return cls(tuple(i == rank - 1 for i in range(n)))

    @property
    def first_relevant(self) -> Optional[int]:
        for i, r in enumerate(self.relevance):
            if r:
                return i + 1
        return None


def _as_ranking(r) -> LabeledRanking:
    return r if isinstance(r, LabeledRanking) else LabeledRanking(tuple(r))


def average_precision(r) -> float:
    """Mean of precision@k over the ranks k of relevant items; 0 without any."""
    precisions = []
    hits = 0
    for rank, relevant in enumerate(_as_ranking(r).relevance, start=1):
        if relevant:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    return math.fsum(precisions) / len(precisions)


def mean_average_precision(rankings: Iterable) -> float:
    aps = [average_precision(r) for r in rankings]
    if not aps:
        raise ValueError("no rankings")
    return math.fsum(aps) / len(aps)


def _first_ranks(rankings: Iterable) -> list[int]:
    # a query without relevant items is scored at the worst rank, len(ranking)
    out = []
    for r in rankings:
        r = _as_ranking(r)
        out.append(r.first_relevant or len(r.relevance))
    return out


def recall_at_k(rankings: Sequence, k: int) -> float:
    rankings = [_as_ranking(r) for r in rankings]
    if not rankings:
        raise ValueError("no rankings")
    hits = [r.first_relevant is not None and r.first_relevant <= k for r in rankings]
    return sum(hits) / len(hits)


def mean_rank(rankings: Sequence) -> float:
    ranks = _first_ranks(rankings)
    if not ranks:
        raise ValueError("no rankings")
    return sum(ranks) / len(ranks)


def summarize(rankings: Sequence, ks: Sequence[int] = (1, 5, 10)) -> dict:
    out = {"mAP": mean_average_precision(rankings)}
    for k in ks:
        out[f"R@{k}"] = recall_at_k(rankings, k)
    out["mean_r"] = mean_rank(rankings)
    return out
