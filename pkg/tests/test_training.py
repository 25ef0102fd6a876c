import numpy as np
import pytest

from literank import nn, training as tr
from literank.errors import ContractError, TrainingError
from literank.scorers import similarity_matrix


class Docs(dict):
    def load_doc(self, doc_id):
        return self[doc_id]


def toy_data(seed=0, n_queries=20, n_docs=40, p=3, l=2, teacher=True):
    rng = np.random.default_rng(seed)
    docs = Docs({i: 0.5 * rng.normal(size=(p, l)) for i in range(n_docs)})
    queries = {q: 0.5 * rng.normal(size=(p, l)) for q in range(n_queries)}
    records = []
    for q in range(n_queries):
        ids = [int(x) for x in rng.choice(n_docs, 4, replace=False)]
        t = [float(similarity_matrix(queries[q], docs[d]).sum()) for d in ids] if teacher else None
        records.append(tr.TrainingRecord(q, ids[0], ids[1:], t, q + 1))
    return records, queries, docs


class TestParse:
    def test_valid(self, tmp_path):
        (tmp_path / "t.tsv").write_text("# header\n1\t10\t11,12\n2\t20\t21\t0.5,0.1\n\n")
        recs = tr.parse_training_file(tmp_path / "t.tsv")
        assert [(r.query_id, r.positive, r.negatives, r.teacher, r.line) for r in recs] == [
            (1, 10, [11, 12], None, 2),
            (2, 20, [21], [0.5, 0.1], 3),
        ]
        assert recs[0].doc_ids == [10, 11, 12]

    @pytest.mark.parametrize(
        "bad",
        ["1\t10\n", "1\tx\t11\n", "1\t10\t\n", "1\t10\t11,12\t0.5\n"],
        ids=["fields", "non-integer", "no-negatives", "teacher-count"],
    )
    def test_malformed_reports_line(self, tmp_path, bad):
        (tmp_path / "t.tsv").write_text("1\t10\t11\n" + bad)
        with pytest.raises(TrainingError, match=r"t\.tsv:2:"):
            tr.parse_training_file(tmp_path / "t.tsv")

    def test_empty(self, tmp_path):
        (tmp_path / "t.tsv").write_text("# nothing\n")
        with pytest.raises(TrainingError):
            tr.parse_training_file(tmp_path / "t.tsv")


class TestTrainHead:
    @pytest.mark.parametrize("kind", ["flat-lite", "sep-lite", "knrm"])
    def test_zero_lr_keeps_params(self, kind):
        records, queries, docs = toy_data()
        cfg = tr.TrainConfig(steps=5, lr=0.0, weight_decay=0.0, m1=4, m2=5, hidden=6)
        res = tr.train_head(records, queries, docs, kind, "kl", cfg, seed=3)
        fresh = tr.train_head(records, queries, docs, kind, "kl", tr.TrainConfig(steps=0, m1=4, m2=5, hidden=6), seed=3)
        for name, t in res.head.tensors().items():
            np.testing.assert_array_equal(t, fresh.head.tensors()[name])
        assert len(res.losses) == 5

    def test_deterministic(self):
        records, queries, docs = toy_data()
        cfg = tr.TrainConfig(steps=20, batch_size=4, lr=1e-2, m1=4, m2=5)
        a = tr.train_head(records, queries, docs, "sep-lite", "margin-mse", cfg, seed=1)
        b = tr.train_head(records, queries, docs, "sep-lite", "margin-mse", cfg, seed=1)
        assert a.losses == b.losses
        for name, t in a.head.tensors().items():
            assert t.tobytes() == b.head.tensors()[name].tobytes()

    def test_margin_mse_copies_teacher(self):
        # teacher = sum of S entries, which a flat LITE head represents exactly
        records, queries, docs = toy_data()
        cfg = tr.TrainConfig(steps=1500, batch_size=20, lr=1e-2, weight_decay=0.0, hidden=16)
        res = tr.train_head(records, queries, docs, "flat-lite", "margin-mse", cfg, seed=0)
        assert res.losses[0] > 1.0
        assert res.window_means(100)[-1] < 1e-3

    def test_xent_without_teacher(self):
        records, queries, docs = toy_data(teacher=False)
        res = tr.train_head(records, queries, docs, "knrm", "xent", tr.TrainConfig(steps=30, lr=1e-2), seed=0)
        assert np.mean(res.losses[-5:]) < np.mean(res.losses[:5])

    def test_teacher_required(self):
        records, queries, docs = toy_data(teacher=False)
        with pytest.raises(TrainingError, match="teacher"):
            tr.train_head(records, queries, docs, "flat-lite", "kl", tr.TrainConfig(steps=1), seed=0)

    def test_unknown_query(self):
        records, queries, docs = toy_data()
        del queries[5]
        with pytest.raises(TrainingError, match="line 6"):
            tr.train_head(records, queries, docs, "flat-lite", "kl", tr.TrainConfig(steps=1), seed=0)

    def test_non_trainable_kind(self):
        records, queries, docs = toy_data()
        with pytest.raises(ContractError):
            tr.train_head(records, queries, docs, "colbert", "kl", tr.TrainConfig(steps=1), seed=0)

    def test_nan_aborts(self):
        records, queries, docs = toy_data()
        records[0].teacher[1] = float("nan")
        cfg = tr.TrainConfig(steps=3, batch_size=len(records), hidden=4)
        with pytest.raises(TrainingError, match="non-finite loss nan at step 0"):
            tr.train_head(records, queries, docs, "flat-lite", "margin-mse", cfg, seed=0)


class TestTraceTask:
    def test_task_targets(self):
        task = tr.TraceTask.build(1, 2)
        assert task.inputs.shape == (16, 4)
        # the trace of X^T Y is the sum of the diagonal of the similarity matrix
        np.testing.assert_array_equal(task.targets, task.inputs[:, 0] + task.inputs[:, 3])

    def test_diagonal_selector_solves_task(self):
        task = tr.TraceTask.build(2, 2)
        assert task.normalized_mse(nn.diagonal_selector(2)) < 1e-24

    def test_short_fit_improves(self):
        res, task = tr.fit_trace_task(1, 2, steps=300, seed=0)
        assert res.losses[-1] < res.losses[0]
        assert task.normalized_mse(res.head) <= res.losses[-1] + 1e-9

    def test_loss_curve_file(self, tmp_path):
        tr.save_loss_curve(tmp_path / "c.tsv", [1.0, 0.5])
        assert (tmp_path / "c.tsv").read_text() == "0\t1\n1\t0.5\n"
