import numpy as np
import pytest

from literank import nn, rerank as rr
from literank.errors import ContractError, NotFoundError, ShapeError
from literank.index import DocumentIndex, ReductionSpec, build_index, write_index
from literank.scorers import KnrmParams, ScorerKind, score

ALL_KINDS = ["de", "colbert", "topk:2", "knrm", "flat-lite", "sep-lite"]


@pytest.fixture
def small_index(tmp_path, rng):
    docs = [(100 + i, rng.normal(size=(4, 6))) for i in range(12)]
    write_index(tmp_path / "docs.idx", docs)
    return DocumentIndex(tmp_path / "docs.idx")


def head_for(kind, l1=3, l2=6):
    kind = ScorerKind.parse(kind)
    if kind.name == "sep-lite":
        return nn.init_params("sep-lite", (l1, l2, 5, 7), 0)
    if kind.name == "flat-lite":
        return nn.init_params("flat-lite", (l1, l2, 8), 0)
    if kind.name == "knrm":
        return KnrmParams(w=np.linspace(-1, 1, 11))
    return None


class TestRerank:
    def test_single_candidate(self, small_index, rng):
        out = rr.rerank(rr.RerankRequest(1, rng.normal(size=(4, 3)), [105]), small_index, "colbert")
        assert [d for d, _ in out] == [105]

    def test_colbert_hand_order(self, tmp_path):
        docs = [
            (1, [[1.0, 0.0], [0.0, 0.0]]),  # S = [[1,0],[0,0]] -> 1
            (2, [[1.0, 0.0], [0.0, 1.0]]),  # S = I -> 2
            (3, [[0.5, 0.0], [0.5, 2.0]]),  # rows max 0.5 and 2 -> 2.5
        ]
        write_index(tmp_path / "h.idx", docs)
        out = rr.rerank(rr.RerankRequest(1, np.eye(2), [1, 2, 3]), DocumentIndex(tmp_path / "h.idx"), "colbert")
        assert out == [(3, 2.5), (2, 2.0), (1, 1.0)]

    def test_ties_keep_input_order(self, tmp_path):
        m = np.ones((2, 2))
        write_index(tmp_path / "t.idx", [(7, m), (3, m), (5, m)])
        idx = DocumentIndex(tmp_path / "t.idx")
        for order in ([7, 3, 5], [5, 7, 3]):
            out = rr.rerank(rr.RerankRequest(1, np.ones((2, 2)), order), idx, "colbert")
            assert [d for d, _ in out] == order

    def test_missing_candidate(self, small_index, rng):
        with pytest.raises(NotFoundError, match="doc id 999"):
            rr.rerank(rr.RerankRequest(1, rng.normal(size=(4, 3)), [100, 999]), small_index, "colbert")

    def test_empty_candidates(self, rng):
        with pytest.raises(ContractError):
            rr.RerankRequest(1, rng.normal(size=(4, 3)), [])

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_equals_independent_scores(self, small_index, rng, kind):
        head = head_for(kind)
        q = rng.normal(size=(4, 3))
        cands = [int(x) for x in rng.permutation(small_index.ids())]
        out = rr.rerank(rr.RerankRequest(1, q, cands), small_index, kind, head)
        expected = [score(ScorerKind.parse(kind), q, small_index.load_doc(d), head) for d in cands]
        order = sorted(range(len(cands)), key=lambda i: -expected[i])
        assert out == [(cands[i], expected[i]) for i in order]

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_worker_count_irrelevant(self, small_index, rng, kind):
        head = head_for(kind)
        req = rr.RerankRequest(1, rng.normal(size=(4, 3)), small_index.ids())
        base = rr.rerank(req, small_index, kind, head, workers=1)
        for w in (2, 4, 8):
            assert rr.rerank(req, small_index, kind, head, workers=w) == base

    def test_affine_score_transform_keeps_order(self, small_index, rng):
        req = rr.RerankRequest(1, rng.normal(size=(4, 3)), small_index.ids())
        out = rr.rerank(req, small_index, "colbert")
        scores = [s for _, s in out]
        items = [d for d, _ in out]
        from literank.metrics import rank_by_scores

        assert rank_by_scores([2 * s + 1 for s in scores], items) == items

    def test_prepare_query_projects(self, tmp_path, rng):
        dim = rng.normal(size=(2, 4))
        build_index([(1, rng.normal(size=(4, 3)))], tmp_path / "p.idx", ReductionSpec(dim_proj=dim))
        idx = DocumentIndex(tmp_path / "p.idx")
        q = rng.normal(size=(4, 5))
        np.testing.assert_allclose(rr.prepare_query(q, idx), dim @ q)
        with pytest.raises(ShapeError):
            rr.prepare_query(rng.normal(size=(3, 5)), idx)


class TestFiles:
    def test_run_round_trip(self, tmp_path):
        results = {2: [(5, 1.5), (3, 0.25)], 1: [(9, -1.0)]}
        rr.write_run(tmp_path / "run", results)
        lines = (tmp_path / "run").read_text().splitlines()
        assert lines[0] == "2\t5\t1\t1.5"
        assert rr.read_run(tmp_path / "run") == {2: [5, 3], 1: [9]}

    def test_candidates(self, tmp_path):
        (tmp_path / "c").write_text("1\t10\n1\t4\n# comment\n\n2 7\n")
        assert rr.read_candidates(tmp_path / "c") == {1: [10, 4], 2: [7]}
        (tmp_path / "bad").write_text("1\n")
        with pytest.raises(ContractError, match=":1:"):
            rr.read_candidates(tmp_path / "bad")

    def test_qrels_three_and_four_columns(self, tmp_path):
        (tmp_path / "q").write_text("1\t10\t1\n1 0 11 2\n")
        assert rr.read_qrels(tmp_path / "q") == {1: {10: 1.0, 11: 2.0}}

    def test_load_head(self, tmp_path):
        assert rr.load_head(ScorerKind.parse("colbert")) is None
        assert isinstance(rr.load_head(ScorerKind.parse("knrm")), KnrmParams)
        with pytest.raises(ContractError, match="--head"):
            rr.load_head(ScorerKind.parse("sep-lite"))


class TestEvaluate:
    def test_perfect(self):
        rep = rr.evaluate_rankings({1: [1, 2, 3], 2: [4, 5]}, {1: {1: 1}, 2: {4: 2, 5: 1}})
        assert rep.mrr_at_10 == 1.0 and rep.ndcg_at_10 == 1.0

    def test_all_irrelevant(self):
        rep = rr.evaluate_rankings({1: [1, 2]}, {1: {3: 1}})
        assert rep.mrr_at_10 == 0.0 and rep.ndcg_at_10 == 0.0

    def test_two_query_hand_case(self):
        rep = rr.evaluate_rankings({1: [1, 2, 3], 2: [4, 5, 6]}, {1: {1: 1}, 2: {6: 1}})
        assert rep.mrr_at_10 == pytest.approx(2 / 3, abs=1e-12)
        assert rep.per_query[2][0] == pytest.approx(1 / 3)

    def test_missing_qrels_lists_ids(self):
        with pytest.raises(ContractError, match=r"\[2, 3\]"):
            rr.evaluate_rankings({1: [1], 2: [1], 3: [1]}, {1: {1: 1}})

    def test_files(self, tmp_path):
        rr.write_run(tmp_path / "run", {1: [(1, 3.0), (2, 2.0)]})
        (tmp_path / "qrels").write_text("1\t2\t1\n")
        rep = rr.evaluate(tmp_path / "run", tmp_path / "qrels")
        assert rep.mrr_at_10 == 0.5
        assert rep.format().splitlines()[-1] == "all\tMRR@10=0.500000\tnDCG@10=0.630930"


class TestBench:
    def test_counts_match_instrumentation(self, small_index):
        kinds = [ScorerKind.parse(k) for k in ALL_KINDS]
        heads = {k: head_for(k) for k in ALL_KINDS if head_for(k) is not None}
        reports = rr.bench(small_index, kinds, heads, num_queries=2, repetitions=1, k=10, l1=3)
        for r in reports:
            assert r.counted_dot_products == r.dot_products
            assert r.payload_bytes == 12 * 4 * 4 * 6  # float data only, ids excluded
        by = {r.scorer: r for r in reports}
        assert by["de"].dot_products == 10
        assert by["colbert"].dot_products == 10 * 3 * 6
        assert by["colbert"].mlp_flops == 0

    def test_analytic_counts(self):
        assert rr.analytic_dot_products(ScorerKind.parse("de"), 100, 30, 200) == 100
        assert rr.analytic_dot_products(ScorerKind.parse("colbert"), 100, 30, 200) == 600000

    def test_sep_lite_flops_formula(self):
        head = nn.SepLiteParams.zeros(3, 4, 5, 6)
        l1, l2, m1, m2 = 3, 4, 5, 6
        mm = 2 * (m2 * l2 + l2 * m2) * l1 + 2 * (m1 * l1 + l1 * m1) * l2 + 2 * l1 * l2
        assert rr.head_flops(ScorerKind.parse("sep-lite"), l1, l2, head) > mm

    def test_format(self, small_index):
        reports = rr.bench(small_index, [ScorerKind.parse("de")], num_queries=1, repetitions=1, k=5, l1=2)
        text = rr.format_bench(reports)
        assert text.splitlines()[0].startswith("scorer\t")
        assert text.splitlines()[1].startswith("de\t5\t2\t6\t4\t")

    def test_empty_index(self, tmp_path):
        write_index(tmp_path / "e.idx", [], shape=(2, 2))
        with pytest.raises(ContractError):
            rr.bench(DocumentIndex(tmp_path / "e.idx"), [ScorerKind.parse("de")])
