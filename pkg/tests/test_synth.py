import numpy as np
import pytest

from htsparse.synth import GRADE_CUTS, SynthConfig, read_triples, synth_corpus, write_synth, zipf_probs
from htsparse.vectors import read_vectors

SMALL = SynthConfig(seed=5, n_docs=80, n_queries=12, vocab=300, topics=5)


def test_same_seed_same_bytes(tmp_path):
    a = write_synth(synth_corpus(SMALL), tmp_path / "a")
    b = write_synth(synth_corpus(SMALL), tmp_path / "b")
    for name in a:
        assert a[name].read_bytes() == b[name].read_bytes()


def test_different_seed_differs():
    a = synth_corpus(SMALL)
    b = synth_corpus(SynthConfig(**{**SMALL.__dict__, "seed": 6}))
    assert list(a.docs) != list(b.docs)


def test_shapes_and_ids():
    data = synth_corpus(SMALL)
    assert len(data.docs) == 80 and len(data.queries) == 12
    assert data.affinity.shape == (12, 80)
    assert len(data.triples) == 12 * SMALL.triples_per_query
    docs = data.docs.by_id()
    for tr in data.triples:
        assert tr["pos"] in docs and tr["neg"] in docs and tr["pos"] != tr["neg"]


def test_grades_follow_affinity():
    data = synth_corpus(SMALL)
    for qid, judged in data.qrels.items():
        qi = int(qid[1:])
        for did, grade in judged.items():
            a = data.affinity[qi, int(did[1:])]
            assert 1 <= grade <= 3
            assert a >= GRADE_CUTS[grade - 1]
            assert grade == 3 or a < GRADE_CUTS[grade]


def test_teacher_margin_tracks_affinity():
    data = synth_corpus(SMALL)
    for tr in data.triples:
        qi, pi, ni = int(tr["q"][1:]), int(tr["pos"][1:]), int(tr["neg"][1:])
        expected = SMALL.margin_scale * (data.affinity[qi, pi] - data.affinity[qi, ni])
        assert tr["teacher_margin"] == pytest.approx(expected, abs=1e-12)


def test_zipf_probs():
    p = zipf_probs(4, 1.0)
    assert p.sum() == pytest.approx(1.0)
    assert p.tolist() == pytest.approx([12 / 25, 6 / 25, 4 / 25, 3 / 25])


def test_zipf_zero_is_near_uniform():
    cfg = SynthConfig(seed=1, n_docs=400, n_queries=1, vocab=50, zipf_s=0.0, topics=3, doc_len=100)
    data = synth_corpus(cfg)
    counts = np.zeros(cfg.vocab)
    for d in data.docs:
        counts[d.tokens] += 1
    expected = counts.mean()
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    dof = cfg.vocab - 1
    # loose sanity check: within a few standard deviations of the chi-square mean
    assert chi2 < dof + 6 * np.sqrt(2 * dof)


def test_skewed_head_for_positive_exponent():
    data = synth_corpus(SynthConfig(seed=1, n_docs=300, n_queries=1, vocab=500, topics=1, background=1.0))
    counts = np.zeros(500)
    for d in data.docs:
        counts[d.tokens] += 1
    assert counts[:10].mean() > 10 * counts[250:].mean()


def test_files_parse(tmp_path):
    paths = write_synth(synth_corpus(SMALL), tmp_path)
    assert len(read_vectors(paths["docs"], SMALL.vocab)) == SMALL.n_docs
    assert len(read_triples(paths["triples"])) == len(synth_corpus(SMALL).triples)


def test_malformed_triple(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"q": "Q0"}\n')
    with pytest.raises(ValueError, match=":1"):
        read_triples(p)


def test_rejects_empty_corpus():
    with pytest.raises(ValueError):
        synth_corpus(SynthConfig(n_docs=0))
