"""Head-only training with frozen (pre-computed) query and document embeddings."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from literank import nn
from literank.errors import ContractError, TrainingError
from literank.losses import LOSSES, loss_and_grad
from literank.scorers import ScorerKind, similarity_matrix
from literank.theory import binary_universe

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m1: int = nn.DEFAULT_M1
    m2: int = nn.DEFAULT_M2
    hidden: int = 64  # flat LITE width

    def optimizer(self) -> nn.AdamW:
        return nn.AdamW(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)


@dataclass
class TrainingRecord:
    query_id: int
    positive: int
    negatives: list[int]
    teacher: list[float] | None = None
    line: int = 0

    @property
    def doc_ids(self) -> list[int]:
        return [self.positive, *self.negatives]


@dataclass
class TrainResult:
    head: object
    losses: list[float] = field(default_factory=list)

    def window_means(self, window: int = 100) -> list[float]:
        n = len(self.losses) // window
        return [float(np.mean(self.losses[i * window : (i + 1) * window])) for i in range(n)]


def parse_training_file(path) -> list[TrainingRecord]:
    """Read ``query_id TAB positive TAB neg1,neg2,... [TAB teacher1,teacher2,...]`` lines.

    Teacher scores, when present, cover the positive first, then each negative.
    Blank lines and lines starting with ``#`` are skipped.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise TrainingError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(cols)}")
            try:
                qid, pos = int(cols[0]), int(cols[1])
                negs = [int(x) for x in cols[2].split(",") if x.strip()]
                teacher = [float(x) for x in cols[3].split(",")] if len(cols) == 4 and cols[3].strip() else None
            except ValueError as exc:
                raise TrainingError(f"{path}:{lineno}: {exc}") from None
            if not negs:
                raise TrainingError(f"{path}:{lineno}: at least one negative document is required")
            if teacher is not None and len(teacher) != 1 + len(negs):
                raise TrainingError(
                    f"{path}:{lineno}: {len(teacher)} teacher scores for {1 + len(negs)} documents"
                )
            records.append(TrainingRecord(qid, pos, negs, teacher, lineno))
    if not records:
        raise TrainingError(f"{path}: no training records")
    return records


def _new_head(kind: ScorerKind, l1: int, l2: int, config: TrainConfig, seed: int):
    if kind.name == "sep-lite":
        return nn.init_params("sep-lite", (l1, l2, config.m1, config.m2), seed)
    if kind.name == "flat-lite":
        return nn.init_params("flat-lite", (l1, l2, config.hidden), seed)
    if kind.name == "knrm":
        return nn.init_params("knrm", (l1, l2), seed)
    raise ContractError(f"scorer {kind} has no trainable head")


def _check_finite(value: float, step: int, detail: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at step {step} ({detail})")


def train_head(
    records: Sequence[TrainingRecord],
    queries: Mapping[int, np.ndarray],
    docs,
    kind: ScorerKind | str,
    loss: str,
    config: TrainConfig | None = None,
    seed: int = 0,
    head=None,
) -> TrainResult:
    """Fit a scorer head on (query, positive, negatives) records.

    ``queries`` maps query ids to P x L1 token matrices; ``docs`` is anything
    with ``load_doc(doc_id)`` (usually a :class:`~literank.index.DocumentIndex`).
    Each step averages the per-record loss over a minibatch drawn with a
    seeded generator, so identical inputs give identical heads.
    """
    config = config or TrainConfig()
    kind = ScorerKind.parse(kind) if isinstance(kind, str) else kind
    if not kind.trainable:
        raise ContractError(f"scorer {kind} has no trainable head")
    if loss not in LOSSES:
        raise ContractError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    if loss in ("kl", "margin-mse", "mse"):
        missing = [r.line for r in records if r.teacher is None]
        if missing:
            raise TrainingError(f"loss {loss!r} needs teacher scores; missing on lines {missing[:10]}")

    sims: list[list[np.ndarray]] = []
    for r in records:
        if r.query_id not in queries:
            raise TrainingError(f"line {r.line}: unknown query id {r.query_id}")
        q = queries[r.query_id]
        sims.append([similarity_matrix(q, docs.load_doc(d)) for d in r.doc_ids])
    l1, l2 = sims[0][0].shape

    if head is None:
        head = _new_head(kind, l1, l2, config, seed)
    params = nn.trainable_tensors(head)
    opt = config.optimizer()
    rng = np.random.default_rng(seed)
    batch = min(config.batch_size, len(records))
    result = TrainResult(head)

    for step in range(config.steps):
        chosen = rng.choice(len(records), size=batch, replace=False)
        grads = {n: np.zeros_like(t) for n, t in params.items()}
        total = 0.0
        for i in chosen:
            outs = [nn.head_forward(head, s) for s in sims[i]]
            scores = np.array([o[0] for o in outs])
            value, dscores = loss_and_grad(loss, scores, records[i].teacher)
            _check_finite(value, step, f"record on line {records[i].line}, scores {scores.tolist()}")
            total += value
            for (_, cache), up in zip(outs, dscores):
                g, _ = nn.head_backward(cache, float(up) / batch)
                for n in grads:
                    grads[n] += g[n]
        result.losses.append(total / batch)
        opt.step(params, grads)
    log.info("trained %s head for %d steps, final loss %.6g", kind, config.steps, result.losses[-1] if result.losses else float("nan"))
    return result


# -- synthetic trace task ------------------------------------------------------------


@dataclass
class TraceTask:
    """All (X, Y) pairs of binary P x L matrices with target ``tr(X^T Y)``.

    Encoders are the identity, so the similarity matrix is ``X^T Y``.
    """

    p: int
    l: int
    inputs: np.ndarray  # (pairs, L*L) flattened similarity matrices
    targets: np.ndarray

    @classmethod
    def build(cls, p: int, l: int) -> "TraceTask":
        u = binary_universe(p, l)
        mats = u.reshape(-1, p, l)
        sims = np.einsum("apl,bpm->ablm", mats, mats).reshape(-1, l * l)
        targets = (u @ u.T).ravel()
        return cls(p, l, sims, targets)

    def normalized_mse(self, head: nn.FlatLiteParams) -> float:
        pred, _ = nn.flat_lite_batch(self.inputs, head)
        return float(np.mean((pred - self.targets) ** 2))


def fit_trace_task(
    p: int = 2,
    l: int = 2,
    steps: int = 5000,
    seed: int = 0,
    config: TrainConfig | None = None,
) -> tuple[TrainResult, TraceTask]:
    """Train a flat LITE head by full-batch squared error on the trace task.

    The recorded loss is the normalized MSE (mean over all pairs) before each
    update, which is the quantity compared against the dual-encoder floor.
    """
    config = config or TrainConfig(hidden=32)
    task = TraceTask.build(p, l)
    head = nn.init_params("flat-lite", (l, l, config.hidden), seed)
    params = head.tensors()
    opt = config.optimizer()
    result = TrainResult(head)
    n = task.targets.size
    for step in range(steps):
        pred, h = nn.flat_lite_batch(task.inputs, head)
        resid = pred - task.targets
        mse = float(np.mean(resid**2))
        _check_finite(mse, step, "trace task")
        result.losses.append(mse)
        grads = nn.flat_lite_batch_backward(task.inputs, h, head, 2.0 * resid / n)
        opt.step(params, grads)
    return result, task


def save_loss_curve(path, losses: Sequence[float]) -> None:
    Path(path).write_text("".join(f"{i}\t{v:.10g}\n" for i, v in enumerate(losses)), encoding="utf-8")
