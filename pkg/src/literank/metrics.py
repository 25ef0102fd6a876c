"""Re-ranking metrics: MRR@10 and nDCG@10."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from literank.errors import ContractError

CUTOFF = 10


def rank_by_scores(scores: Sequence[float], items: Sequence) -> list:
    """Order ``items`` by descending score; equal scores keep input order."""
    if len(scores) != len(items):
        raise ContractError(f"{len(scores)} scores for {len(items)} items")
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return [items[i] for i in order]


def reciprocal_rank(ranked_relevance: Sequence, cutoff: int = CUTOFF) -> float:
    for rank, rel in enumerate(ranked_relevance[:cutoff], start=1):
        if rel:
            return 1.0 / rank
    return 0.0


def mrr_at_10(rankings: Sequence[Sequence]) -> float:
    """Mean reciprocal rank of the first relevant document within the top 10.

    ``rankings`` holds one list of relevance flags per query, already in ranked
    order.
    """
    if len(rankings) == 0:
        raise ContractError("MRR@10 needs at least one query")
    return float(np.mean([reciprocal_rank(r) for r in rankings]))


def dcg(gains: Sequence[float], cutoff: int = CUTOFF) -> float:
    return sum((2.0 ** g - 1.0) / math.log2(rank + 1) for rank, g in enumerate(gains[:cutoff], start=1))


def ndcg(ranked_gains: Sequence[float], ideal_gains: Sequence[float] | None = None, cutoff: int = CUTOFF) -> float:
    if any(g < 0 for g in ranked_gains):
        raise ContractError("relevance grades must be nonnegative")
    pool = ranked_gains if ideal_gains is None else ideal_gains
    ideal = dcg(sorted(pool, reverse=True), cutoff)
    if ideal == 0.0:
        return 0.0
    return dcg(ranked_gains, cutoff) / ideal


def ndcg_at_10(rankings: Sequence[Sequence[float]], ideals: Sequence[Sequence[float]] | None = None) -> float:
    """Mean nDCG@10 with exponential gain ``2^rel - 1``.

    The ideal ordering is built from the ranked list itself unless ``ideals``
    supplies each query's full judged grades (e.g. from qrels). Queries whose
    ideal DCG is zero contribute 0.
    """
    if len(rankings) == 0:
        raise ContractError("nDCG@10 needs at least one query")
    if ideals is not None and len(ideals) != len(rankings):
        raise ContractError(f"{len(ideals)} ideal lists for {len(rankings)} rankings")
    vals = [ndcg(r, None if ideals is None else ideals[i]) for i, r in enumerate(rankings)]
    return float(np.mean(vals))
