"""Re-ranking pipeline: candidate scoring, run/qrels files, evaluation and benchmarks.

File formats (tab-separated, one record per line):

* candidates: ``query_id  doc_id``; candidate order is preserved per query
* run: ``query_id  doc_id  rank  score``
* qrels: ``query_id  doc_id  relevance`` (the 4-column TREC form
  ``query_id 0 doc_id relevance`` is also accepted)

Query and document embeddings use the index file layout
(see :mod:`literank.index`); query token matrices must already have exactly
L1 columns.
"""

from __future__ import annotations

import statistics
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from literank import metrics, nn
from literank.errors import ContractError, NotFoundError, ShapeError
from literank.index import DocumentIndex
from literank.scorers import KnrmParams, ScorerKind, count_dot_products, score
from literank.tensor import as_matrix


@dataclass
class RerankRequest:
    query_id: int
    query_tokens: np.ndarray
    candidates: list[int]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ContractError(f"query {self.query_id} has no candidates")


def prepare_query(q, index: DocumentIndex) -> np.ndarray:
    """Apply the index's dimension projection to a raw query when needed."""
    q = as_matrix(q, "query tokens")
    p = index.header.token_dim
    if q.shape[0] == p:
        return q
    if index.reduction.dim_proj is not None:
        q = index.reduction.apply_query(q)
        if q.shape[0] == p:
            return q
    raise ShapeError(f"query token dimension {q.shape[0]} does not match index dimension {p}")


def rerank(
    request: RerankRequest,
    index: DocumentIndex,
    kind: ScorerKind | str,
    head=None,
    workers: int = 1,
) -> list[tuple[int, float]]:
    """Score every candidate and sort by descending score (stable on ties).

    Candidates are scored independently, optionally on a thread pool; results
    are gathered in candidate order before sorting, so the output does not
    depend on ``workers``.
    """
    kind = ScorerKind.parse(kind) if isinstance(kind, str) else kind
    missing = [d for d in request.candidates if d not in index]
    if missing:
        raise NotFoundError(f"query {request.query_id}: doc id {missing[0]} not in index ({len(missing)} missing)")
    q = request.query_tokens

    def one(doc_id: int) -> float:
        return score(kind, q, index.load_doc(doc_id), head)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(one, request.candidates))
    else:
        scores = [one(d) for d in request.candidates]
    pairs = list(zip(request.candidates, scores))
    return metrics.rank_by_scores(scores, pairs)


# -- file formats ----------------------------------------------------------------


def read_candidates(path) -> "OrderedDict[int, list[int]]":
    out: OrderedDict[int, list[int]] = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split()
            if len(cols) < 2:
                raise ContractError(f"{path}:{lineno}: expected 'query_id doc_id'")
            out.setdefault(int(cols[0]), []).append(int(cols[1]))
    return out


def write_run(path, results: Mapping[int, Sequence[tuple[int, float]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranked in results.items():
            for rank, (doc_id, s) in enumerate(ranked, start=1):
                fh.write(f"{qid}\t{doc_id}\t{rank}\t{s!r}\n")


def read_run(path) -> "OrderedDict[int, list[int]]":
    """Doc ids per query, ordered by the rank column."""
    rows: OrderedDict[int, list[tuple[int, int]]] = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 4:
                raise ContractError(f"{path}:{lineno}: expected 4 fields, got {len(cols)}")
            rows.setdefault(int(cols[0]), []).append((int(cols[2]), int(cols[1])))
    return OrderedDict((q, [d for _, d in sorted(v, key=lambda x: x[0])]) for q, v in rows.items())


def read_qrels(path) -> dict[int, dict[int, float]]:
    qrels: dict[int, dict[int, float]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split()
            if len(cols) == 3:
                qid, did, rel = cols
            elif len(cols) == 4:
                qid, _, did, rel = cols
            else:
                raise ContractError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(cols)}")
            qrels.setdefault(int(qid), {})[int(did)] = float(rel)
    return qrels


def load_queries(path) -> dict[int, np.ndarray]:
    return dict(DocumentIndex(path))


def load_head(kind: ScorerKind, path=None):
    if not kind.trainable:
        return None
    if path is None:
        if kind.name == "knrm":
            return KnrmParams()
        raise ContractError(f"scorer {kind} needs --head")
    return nn.load_checkpoint(path, expect=kind.name)


# -- evaluation ------------------------------------------------------------------


@dataclass
class EvalReport:
    per_query: dict[int, tuple[float, float]]
    mrr_at_10: float
    ndcg_at_10: float

    def format(self) -> str:
        lines = [f"{qid}\tMRR@10={m:.6f}\tnDCG@10={n:.6f}" for qid, (m, n) in self.per_query.items()]
        lines.append(f"all\tMRR@10={self.mrr_at_10:.6f}\tnDCG@10={self.ndcg_at_10:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_rankings(runs: Mapping[int, Sequence[int]], qrels: Mapping[int, Mapping[int, float]]) -> EvalReport:
    missing = [q for q in runs if q not in qrels]
    if missing:
        raise ContractError(f"no qrels for query ids {missing}")
    if not runs:
        raise ContractError("run has no queries")
    per_query = {}
    flags, gains, ideals = [], [], []
    for qid, docs in runs.items():
        judged = qrels[qid]
        g = [judged.get(d, 0.0) for d in docs]
        flags.append([x > 0 for x in g])
        gains.append(g)
        ideals.append(list(judged.values()))
        per_query[qid] = (metrics.reciprocal_rank(flags[-1]), metrics.ndcg(g, ideals[-1]))
    return EvalReport(per_query, metrics.mrr_at_10(flags), metrics.ndcg_at_10(gains, ideals))


def evaluate(run_path, qrels_path) -> EvalReport:
    return evaluate_rankings(read_run(run_path), read_qrels(qrels_path))


# -- benchmark -------------------------------------------------------------------


@dataclass
class BenchReport:
    scorer: str
    docs_per_query: int
    query_tokens: int
    doc_tokens: int
    token_dim: int
    ms_per_query: float
    dot_products: int
    counted_dot_products: int
    dot_product_flops: int
    mlp_flops: int
    payload_bytes: int

    def as_dict(self) -> dict:
        return asdict(self)


def analytic_dot_products(kind: ScorerKind, k: int, l1: int, l2: int) -> int:
    """One pooled dot product per document for DE; L1 * L2' for late interaction."""
    return k if kind.name == "de" else k * l1 * l2


def head_flops(kind: ScorerKind, l1: int, l2: int, head=None) -> int:
    """Per-document arithmetic after the similarity matrix is formed.

    Separable LITE: matmuls ``2(m2 L2' + L2' m2) L1 + 2(m1 L1 + L1 m1) L2'``,
    the final projection ``2 L1 L2'``, and linear terms counted as 7 flops per
    hidden or output activation (bias add, ReLU, 5 for layer norm).
    Flat LITE: ``2 m L1 L2'`` plus bias, ReLU and the output dot product.
    KNRM: 6 flops per kernel per similarity entry, a log per kernel per query
    token and the final weighted sum. Sum-max and top-k count as comparisons,
    not flops, and report 0.
    """
    if kind.name == "sep-lite":
        _, _, m1, m2 = head.dims
        mm = 2 * (m2 * l2 + l2 * m2) * l1 + 2 * (m1 * l1 + l1 * m1) * l2 + 2 * l1 * l2
        linear = 7 * (l1 * (m2 + l2) + l2 * (m1 + l1))
        return mm + linear
    if kind.name == "flat-lite":
        m = head.W.shape[0]
        return 2 * m * l1 * l2 + 4 * m
    if kind.name == "knrm":
        k = head.mus.size
        return 6 * k * l1 * l2 + k * l1 + 2 * k
    return 0


def bench(
    index: DocumentIndex,
    kinds: Sequence[ScorerKind],
    heads: Mapping[str, object] | None = None,
    num_queries: int = 10,
    repetitions: int = 3,
    k: int = 100,
    l1: int = 30,
    warmup: int = 1,
    seed: int = 0,
) -> list[BenchReport]:
    """Time re-ranking of ``k`` candidates per random query for each scorer.

    Wall-clock numbers are medians after ``warmup`` discarded runs; counts
    come from the analytic formulas and from the instrumented scorers.
    """
    heads = dict(heads or {})
    rng = np.random.default_rng(seed)
    p, l2 = index.shape
    ids = index.ids()[:k]
    k = len(ids)
    if k == 0:
        raise ContractError("cannot benchmark an empty index")
    queries = [rng.normal(size=(p, l1)) for _ in range(num_queries)]
    reports = []
    for kind in kinds:
        head = heads.get(str(kind)) or heads.get(kind.name)
        if kind.trainable and head is None:
            if kind.name == "sep-lite":
                head = nn.init_params("sep-lite", (l1, l2, nn.DEFAULT_M1, nn.DEFAULT_M2), seed)
            elif kind.name == "flat-lite":
                head = nn.init_params("flat-lite", (l1, l2, 64), seed)
            else:
                head = KnrmParams()
        for _ in range(warmup):
            rerank(RerankRequest(-1, queries[0], ids), index, kind, head)
        times = []
        for _ in range(repetitions):
            for qi, q in enumerate(queries):
                t0 = time.perf_counter()
                rerank(RerankRequest(qi, q, ids), index, kind, head)
                times.append((time.perf_counter() - t0) * 1e3)
        with count_dot_products() as counter:
            rerank(RerankRequest(0, queries[0], ids), index, kind, head)
        dots = analytic_dot_products(kind, k, l1, l2)
        reports.append(
            BenchReport(
                scorer=str(kind),
                docs_per_query=k,
                query_tokens=l1,
                doc_tokens=l2,
                token_dim=p,
                ms_per_query=statistics.median(times),
                dot_products=dots,
                counted_dot_products=counter.count,
                dot_product_flops=2 * p * dots,
                mlp_flops=k * head_flops(kind, l1, l2, head),
                payload_bytes=index.header.payload_bytes,
            )
        )
    return reports


def format_bench(reports: Sequence[BenchReport]) -> str:
    cols = ("scorer", "docs", "L1", "L2'", "P'", "ms/query", "dot_products", "counted", "mlp_flops", "payload_bytes")
    lines = ["\t".join(cols)]
    for r in reports:
        lines.append(
            f"{r.scorer}\t{r.docs_per_query}\t{r.query_tokens}\t{r.doc_tokens}\t{r.token_dim}\t"
            f"{r.ms_per_query:.3f}\t{r.dot_products}\t{r.counted_dot_products}\t{r.mlp_flops}\t{r.payload_bytes}"
        )
    return "\n".join(lines) + "\n"
