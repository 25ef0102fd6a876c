"""Command-line entry point: ``literank <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from literank import nn, rerank as rr, theory, training
from literank.errors import CheckpointError, ContractError, IndexFormatError, NotFoundError, ShapeError, TrainingError
from literank.index import DocumentIndex, ReductionSpec, build_index, storage_bytes, write_index
from literank.scorers import ScorerKind

log = logging.getLogger("literank")


def _cmd_build_index(args) -> int:
    reduction = ReductionSpec(
        avg_pool=args.avg_pool,
        token_proj=nn.load_checkpoint(args.token_proj, "projection") if args.token_proj else None,
        dim_proj=nn.load_checkpoint(args.dim_proj, "projection") if args.dim_proj else None,
    )
    src = DocumentIndex(args.inp)
    shape = None
    if len(src) == 0:
        shape = reduction.apply(np.zeros(src.shape)).shape
    header = build_index(src, args.out, reduction, shape)
    print(
        f"wrote {args.out}: {header.doc_count} docs, {header.token_dim} x {header.tokens_per_doc} per doc, "
        f"{storage_bytes(header)} bytes ({header.payload_bytes} payload)"
    )
    return 0


def _cmd_rerank(args) -> int:
    index = DocumentIndex(args.index)
    kind = ScorerKind.parse(args.scorer)
    head = rr.load_head(kind, args.head)
    queries = rr.load_queries(args.queries)
    results = {}
    for qid, cands in rr.read_candidates(args.candidates).items():
        if qid not in queries:
            raise NotFoundError(f"query id {qid} not in {args.queries}")
        q = rr.prepare_query(queries[qid], index)
        results[qid] = rr.rerank(rr.RerankRequest(qid, q, cands), index, kind, head, workers=args.workers)
    rr.write_run(args.out, results)
    print(f"wrote {args.out}: {len(results)} queries")
    return 0


def _cmd_train(args) -> int:
    index = DocumentIndex(args.index)
    kind = ScorerKind.parse(args.scorer)
    queries = {qid: rr.prepare_query(q, index) for qid, q in rr.load_queries(args.queries).items()}
    records = training.parse_training_file(args.data)
    config = training.TrainConfig(
        steps=args.steps, batch_size=args.batch_size, lr=args.lr, weight_decay=args.weight_decay,
        m1=args.m1, m2=args.m2, hidden=args.hidden,
    )
    result = training.train_head(records, queries, index, kind, args.loss, config, args.seed)
    nn.save_checkpoint(args.out, result.head)
    if args.loss_curve:
        training.save_loss_curve(args.loss_curve, result.losses)
    final = result.losses[-1] if result.losses else float("nan")
    print(f"wrote {args.out}: {kind} head, {len(result.losses)} steps, final loss {final:.6g}")
    return 0


def _cmd_bench(args) -> int:
    index = DocumentIndex(args.index)
    kinds = [ScorerKind.parse(s) for s in args.scorers.split(",") if s.strip()]
    heads = {}
    for spec in args.head or []:
        name, _, path = spec.partition("=")
        heads[name] = nn.load_checkpoint(path, expect=ScorerKind.parse(name).name)
    for kind in kinds:
        if kind.name == "sep-lite" and kind.name not in heads:
            heads[kind.name] = nn.init_params("sep-lite", (args.l1, index.shape[1], args.m1, args.m2), args.seed)
    reports = rr.bench(index, kinds, heads, args.queries, args.reps, k=args.k, l1=args.l1, seed=args.seed)
    if args.json:
        print(json.dumps([r.as_dict() for r in reports], indent=2))
    else:
        sys.stdout.write(rr.format_bench(reports))
    return 0


def _cmd_evaluate(args) -> int:
    sys.stdout.write(rr.evaluate(args.run, args.qrels).format())
    return 0


def _cmd_verify_theory(args) -> int:
    report = theory.verify_rank_limit(args.p, args.l, args.o)
    sys.stdout.write(report.format())
    return 0 if report.passed else 1


def _cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    docs = ((args.start_id + i, rng.normal(size=(args.dim, args.tokens))) for i in range(args.count))
    header = write_index(args.out, docs, (args.dim, args.tokens))
    print(f"wrote {args.out}: {header.doc_count} random {args.dim} x {args.tokens} matrices")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="literank", description="Late-interaction re-ranking toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="reduce and index document embeddings")
    p.add_argument("--in", dest="inp", required=True, help="raw document embeddings (index layout)")
    p.add_argument("--out", required=True)
    tok = p.add_mutually_exclusive_group()
    tok.add_argument("--avg-pool", type=int, metavar="N")
    tok.add_argument("--token-proj", metavar="CKPT")
    p.add_argument("--dim-proj", metavar="CKPT")
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("rerank", help="re-score candidate lists")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--scorer", required=True, help="de, colbert, topk:K, knrm, flat-lite, sep-lite")
    p.add_argument("--head")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("train", help="train a scorer head on frozen embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--scorer", required=True, choices=["knrm", "flat-lite", "sep-lite"])
    p.add_argument("--loss", required=True, choices=["kl", "margin-mse", "xent"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--m1", type=int, default=nn.DEFAULT_M1)
    p.add_argument("--m2", type=int, default=nn.DEFAULT_M2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--loss-curve")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("bench", help="latency, dot-product and storage accounting")
    p.add_argument("--index", required=True)
    p.add_argument("--scorers", required=True, help="comma-separated scorer kinds")
    p.add_argument("--queries", type=int, default=10)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--l1", type=int, default=30)
    p.add_argument("--m1", type=int, default=nn.DEFAULT_M1)
    p.add_argument("--m2", type=int, default=nn.DEFAULT_M2)
    p.add_argument("--head", action="append", metavar="KIND=CKPT")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("evaluate", help="MRR@10 and nDCG@10 of a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("verify-theory", help="check the dual-encoder rank limit numerically")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--o", type=int)
    p.set_defaults(func=_cmd_verify_theory)

    p = sub.add_parser("synth", help="write random embeddings in the index layout")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--tokens", type=int, required=True)
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractError, ShapeError, NotFoundError, IndexFormatError, CheckpointError, TrainingError, OSError) as exc:
        print(f"literank {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
