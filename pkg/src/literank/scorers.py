"""Relevance scorers over query/document token embeddings.

Token matrices are P x L (one column per token). Every late-interaction scorer
consumes the similarity matrix ``S = Q^T D`` of shape L1 x L2.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from literank.errors import ContractError, ShapeError
from literank.tensor import as_matrix

KNRM_LOG_FLOOR = 1e-10

SCORER_NAMES = ("de", "colbert", "topk", "knrm", "flat-lite", "sep-lite")
TRAINABLE = ("knrm", "flat-lite", "sep-lite")


# -- dot-product instrumentation ---------------------------------------------


class DotCounter:
    """Thread-safe tally of query/document token dot products."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self.count += n


_counters: list[DotCounter] = []
_counters_lock = threading.Lock()


@contextmanager
def count_dot_products() -> Iterator[DotCounter]:
    """Count dot products taken by :func:`similarity_matrix` and :func:`de_score`.

    The counter is process-wide so worker threads spawned inside the block are
    included.
    """
    counter = DotCounter()
    with _counters_lock:
        _counters.append(counter)
    try:
        yield counter
    finally:
        with _counters_lock:
            _counters.remove(counter)


def _tally(n: int) -> None:
    if _counters:
        for c in list(_counters):
            c.add(n)


# -- scorer kinds and parameters ---------------------------------------------


@dataclass(frozen=True)
class ScorerKind:
    """Which scorer to apply; ``k`` only matters for ``topk``."""

    name: str
    k: int = 1

    def __post_init__(self) -> None:
        if self.name not in SCORER_NAMES:
            raise ContractError(f"unknown scorer {self.name!r}; expected one of {SCORER_NAMES}")
        if self.k < 1:
            raise ContractError(f"top-k needs k >= 1, got {self.k}")

    @classmethod
    def parse(cls, text: str) -> "ScorerKind":
        """Parse ``de``, ``colbert``, ``topk:4``, ``knrm``, ``flat-lite`` or ``sep-lite``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "topk":
            return cls("topk", int(arg) if arg else 1)
        if arg:
            raise ContractError(f"scorer {name!r} takes no argument")
        return cls(name)

    @property
    def trainable(self) -> bool:
        return self.name in TRAINABLE

    @property
    def late_interaction(self) -> bool:
        return self.name != "de"

    def __str__(self) -> str:
        return f"topk:{self.k}" if self.name == "topk" else self.name


def default_knrm_mus() -> list[float]:
    return [round(0.9 - 0.2 * i, 10) for i in range(10)] + [1.0]


def default_knrm_sigmas() -> list[float]:
    return [0.1] * 10 + [1e-3]


@dataclass
class KnrmParams:
    """Fixed Gaussian kernels (``mus``, ``sigmas``) and learned weights ``w``."""

    mus: np.ndarray = field(default_factory=lambda: np.array(default_knrm_mus()))
    sigmas: np.ndarray = field(default_factory=lambda: np.array(default_knrm_sigmas()))
    w: np.ndarray = field(default_factory=lambda: np.ones(11))

    def __post_init__(self) -> None:
        self.mus = np.asarray(self.mus, dtype=np.float64).ravel()
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64).ravel()
        self.w = np.asarray(self.w, dtype=np.float64).ravel()
        k = self.mus.size
        if k < 1 or self.sigmas.size != k or self.w.size != k:
            raise ContractError(
                f"KNRM needs equal-length mus/sigmas/w, got {self.mus.size}/{self.sigmas.size}/{self.w.size}"
            )
        if np.any(self.sigmas <= 0):
            raise ContractError("KNRM sigmas must be strictly positive")

    def tensors(self) -> dict[str, np.ndarray]:
        return {"mus": self.mus, "sigmas": self.sigmas, "w": self.w}


# -- scorers -------------------------------------------------------------------


def similarity_matrix(q_tokens, d_tokens) -> np.ndarray:
    """``S[i, j] = q_i . d_j`` for token columns of Q (P x L1) and D (P x L2)."""
    q = as_matrix(q_tokens, "query tokens")
    d = as_matrix(d_tokens, "document tokens")
    if q.shape[0] != d.shape[0]:
        raise ShapeError(f"token dimension mismatch: query {q.shape} vs document {d.shape}")
    _tally(q.shape[1] * d.shape[1])
    return q.T @ d


def de_score(q_pooled, d_pooled) -> float:
    q = np.asarray(q_pooled, dtype=np.float64).ravel()
    d = np.asarray(d_pooled, dtype=np.float64).ravel()
    if q.size != d.size:
        raise ShapeError(f"pooled embedding length mismatch: {q.size} vs {d.size}")
    _tally(1)
    return float(q @ d)


def mean_pool(tokens) -> np.ndarray:
    """Pool a P x L token matrix to a P-vector by averaging columns."""
    return as_matrix(tokens).mean(axis=1)


def colbert_score(s) -> float:
    s = as_matrix(s, "similarity matrix")
    return float(s.max(axis=1).sum())


def colbert_topk_score(s, k: int) -> float:
    """Sum over query tokens of the ``k`` largest similarities in that row."""
    s = as_matrix(s, "similarity matrix")
    if not 1 <= k <= s.shape[1]:
        raise ContractError(f"k must be in [1, {s.shape[1]}], got {k}")
    if k == 1:
        return colbert_score(s)
    top = np.sort(s, axis=1)[:, -k:]
    return float(top.sum())


def knrm_features(s, params: KnrmParams) -> np.ndarray:
    """Per-kernel log soft-match counts summed over query tokens, shape (K,).

    Rows are sorted first so the sums run in a fixed order and the features
    are bit-identical under any permutation of document tokens.
    """
    s = np.sort(as_matrix(s, "similarity matrix"), axis=1)
    diff = s[None, :, :] - params.mus[:, None, None]
    kern = np.exp(-(diff**2) / (2.0 * params.sigmas[:, None, None] ** 2))
    soft_tf = kern.sum(axis=2)  # (K, L1)
    return np.log(np.maximum(soft_tf, KNRM_LOG_FLOOR)).sum(axis=1)


def knrm_score(s, params: KnrmParams) -> float:
    return float(params.w @ knrm_features(s, params))


def score(kind: ScorerKind | str, q_tokens, d_tokens, head=None) -> float:
    """Score one (query, document) pair with any scorer.

    DE mean-pools both token matrices and takes one dot product; the other
    scorers build ``S = Q^T D`` first. Learned scorers need ``head``.
    """
    if isinstance(kind, str):
        kind = ScorerKind.parse(kind)
    if kind.name == "de":
        return de_score(mean_pool(q_tokens), mean_pool(d_tokens))
    s = similarity_matrix(q_tokens, d_tokens)
    return score_similarity(kind, s, head)


def score_similarity(kind: ScorerKind, s: np.ndarray, head=None) -> float:
    from literank import nn  # heads live in nn; avoid a module cycle

    if kind.name == "colbert":
        return colbert_score(s)
    if kind.name == "topk":
        return colbert_topk_score(s, kind.k)
    if kind.trainable and head is None:
        raise ContractError(f"scorer {kind} needs head parameters")
    if kind.name == "knrm":
        if not isinstance(head, KnrmParams):
            raise ContractError(f"knrm needs KnrmParams, got {type(head).__name__}")
        return knrm_score(s, head)
    if kind.name == "flat-lite":
        if not isinstance(head, nn.FlatLiteParams):
            raise ContractError(f"flat-lite needs FlatLiteParams, got {type(head).__name__}")
        return nn.flat_lite_forward(s, head)[0]
    if kind.name == "sep-lite":
        if not isinstance(head, nn.SepLiteParams):
            raise ContractError(f"sep-lite needs SepLiteParams, got {type(head).__name__}")
        return nn.sep_lite_forward(s, head)[0]
    raise ContractError(f"scorer {kind} does not consume a similarity matrix")
