import json
from pathlib import Path

import pytest

from htsparse.metrics import EvalError, EvalReport, mrr_at_k, ndcg_at_k, read_qrels, read_run, write_qrels
from htsparse.search import LatencyStats

FIXTURES = json.loads((Path(__file__).parent / "fixtures" / "metric_fixtures.json").read_text())


@pytest.mark.parametrize("case", FIXTURES, ids=[c["name"] for c in FIXTURES])
class TestFixtures:
    def test_mrr(self, case):
        assert mrr_at_k(case["run"], case["qrels"], case["k"]) == pytest.approx(case["mrr"], abs=1e-6)

    def test_ndcg(self, case):
        assert ndcg_at_k(case["run"], case["qrels"], case["k"]) == pytest.approx(case["ndcg"], abs=1e-6)


class TestWorkedValues:
    def test_swapped_pair(self):
        assert ndcg_at_k({"q": ["dB", "dA"]}, {"q": {"dA": 3, "dB": 1}}) == pytest.approx(0.709810, abs=1e-6)

    def test_rank_two(self):
        assert mrr_at_k({"q": ["x", "r"]}, {"q": {"r": 1}}) == 0.5

    def test_outside_top_ten(self):
        run = {"q": [f"x{i}" for i in range(10)] + ["r"]}
        assert mrr_at_k(run, {"q": {"r": 1}}) == 0.0

    def test_zero_grade_query_excluded(self):
        qrels = {"q1": {"a": 1}, "q2": {"b": 0}}
        assert ndcg_at_k({"q1": ["a"], "q2": ["c"]}, qrels) == 1.0
        assert mrr_at_k({"q1": ["a"], "q2": ["c"]}, qrels) == 1.0

    def test_nothing_judged(self):
        with pytest.raises(EvalError):
            ndcg_at_k({"q": ["a"]}, {"q": {"a": 0}})
        with pytest.raises(EvalError):
            mrr_at_k({}, {})


class TestFiles:
    def test_qrels_round_trip(self, tmp_path):
        qrels = {"q1": {"a": 2, "b": 0}, "q2": {"c": 1}}
        write_qrels(qrels, tmp_path / "q.txt")
        assert read_qrels(tmp_path / "q.txt") == qrels

    def test_run_sorted_by_rank(self, tmp_path):
        p = tmp_path / "run.txt"
        p.write_text("q1 Q0 b 2 0.5 t\nq1 Q0 a 1 0.9 t\n\nq2 Q0 c 1 1.0 t\n")
        assert read_run(p) == {"q1": ["a", "b"], "q2": ["c"]}

    @pytest.mark.parametrize("text", ["q1 0 a\n", "q1 0 a x\n", "q1 0 a -1\n"])
    def test_bad_qrels(self, tmp_path, text):
        p = tmp_path / "q.txt"
        p.write_text(text)
        with pytest.raises(EvalError, match=":1"):
            read_qrels(p)

    @pytest.mark.parametrize("text", ["q1 Q0 a 1 0.5\n", "q1 Q0 a one 0.5 t\n"])
    def test_bad_run(self, tmp_path, text):
        p = tmp_path / "run.txt"
        p.write_text(text)
        with pytest.raises(EvalError):
            read_run(p)


def test_report_table_and_dict():
    rep = EvalReport(0.5, 0.25, LatencyStats(1.0, 2.0, 3), 40.0, 5.5, 1234)
    assert rep.to_dict()["latency"] == {"mean_ms": 1.0, "p99_ms": 2.0, "n": 3}
    table = rep.table()
    assert "MRR@10" in table and "0.5000" in table and "1234" in table
