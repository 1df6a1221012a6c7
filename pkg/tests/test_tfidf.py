import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from reasonpath.corpus import Corpus
from reasonpath.errors import ConfigError
from reasonpath.tfidf import (SparseIndex, TfidfRetriever, build_article_index, build_index,
                              text_features, top_f, two_stage_top_f)
from reasonpath.text import content_tokens, fnv1a_32

from conftest import para

WORDS = "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda omicron".split()


def three_docs():
    return Corpus([para("a/0", "alpha beta"), para("b/0", "beta gamma"), para("c/0", "gamma beta")])


def test_hand_computed_weight_and_score():
    index = build_index(three_docs(), bucket_count=1 << 20)
    idf_alpha = math.log(2.5 / 1.5)
    assert idf_alpha == pytest.approx(0.5108256, abs=1e-6)
    f = fnv1a_32("alpha") & ((1 << 20) - 1)
    assert index.doc_vector("a/0")[f] == pytest.approx(math.log(2) * idf_alpha, abs=1e-12)
    assert index.doc_vector("a/0")[f] == pytest.approx(0.3541, abs=1e-4)
    hits = top_f(index, "alpha", 5)
    assert [pid for pid, _ in hits] == ["a/0"]
    assert hits[0][1] == pytest.approx((math.log(2) * idf_alpha) ** 2, abs=1e-9)
    assert hits[0][1] == pytest.approx(0.1254, abs=1e-4)


def test_common_term_clamped_to_zero():
    index = build_index(three_docs(), bucket_count=1 << 20)
    f = fnv1a_32("beta") & ((1 << 20) - 1)
    assert index.idf(f) == 0.0
    assert index.doc_vector("a/0")[f] == 0.0
    assert top_f(index, "beta", 3) == []


def test_stopword_only_document_has_empty_vector():
    index = build_index(Corpus([para("a/0", "the of and"), para("b/0", "alpha")]), 1 << 10)
    assert index.doc_vector("a/0") == {}


def test_empty_and_unknown_queries():
    index = build_index(three_docs(), 1 << 20)
    assert top_f(index, "", 3) == []
    assert top_f(index, "nothing matches", 3) == []


def test_ties_ordered_by_id():
    c = Corpus([para("b/0", "zeta"), para("a/0", "zeta"), para("c/0", "other"), para("d/0", "more"),
                para("e/0", "extra")])
    index = build_index(c, 1 << 16)
    hits = top_f(index, "zeta", 5)
    assert [pid for pid, _ in hits] == ["a/0", "b/0"]
    assert hits[0][1] == hits[1][1]


def test_config_errors():
    with pytest.raises(ConfigError):
        build_index(three_docs(), bucket_count=1000)
    with pytest.raises(ConfigError):
        top_f(build_index(three_docs(), 1 << 8), "alpha", 0)


def brute_force_scores(texts, query, buckets, n=2):
    """Scores recomputed from raw text with plain dicts and math."""
    N = len(texts)
    feats = {pid: dict(text_features(t, buckets, n)) for pid, t in texts.items()}
    df = {}
    for fs in feats.values():
        for f in fs:
            df[f] = df.get(f, 0) + 1

    def idf(f):
        return max(0.0, math.log((N - df.get(f, 0) + 0.5) / (df.get(f, 0) + 0.5)))

    q = [(f, math.log1p(tf) * idf(f)) for f, tf in text_features(query, buckets, n)]
    q = [(f, w) for f, w in q if w > 0.0]
    out = {}
    for pid, fs in feats.items():
        s = 0.0
        for f, w in q:
            if f in fs:
                s += w * (math.log1p(fs[f]) * idf(f))
        out[pid] = s
    return out


@pytest.mark.parametrize("seed", range(5))
def test_scores_equal_brute_force_exactly(seed):
    rng = random.Random(seed)
    n_docs = rng.randint(5, 100)
    texts = {f"d{i:03d}/0": " ".join(rng.choices(WORDS, k=rng.randint(1, 12))) for i in range(n_docs)}
    buckets = 1 << rng.choice([4, 8, 16])
    index = build_index(Corpus(para(pid, t) for pid, t in texts.items()), buckets)
    for _ in range(5):
        query = " ".join(rng.choices(WORDS, k=rng.randint(1, 4)))
        expected = brute_force_scores(texts, query, buckets)
        got = dict(zip(index.doc_ids, index.scores(query).tolist()))
        assert got == expected


def test_serialization_roundtrip_bit_exact(tmp_path):
    index = build_index(three_docs(), 1 << 12)
    blob = index.to_bytes()
    assert blob.startswith(b"TFIX1")
    again = SparseIndex.from_bytes(blob)
    assert again.to_bytes() == blob
    assert build_index(three_docs(), 1 << 12).to_bytes() == blob
    index.save(tmp_path / "i.bin")
    assert SparseIndex.load(tmp_path / "i.bin").to_bytes() == blob


def test_two_stage_finds_paragraph_of_matching_article():
    c = Corpus([
        para("Zorblat/0", "zorblat is a town"),
        para("Zorblat/1", "its river floods each spring"),
        para("Other/0", "a town on a river"),
        para("Noise/0", "unrelated words here"),
        para("Noise/1", "still unrelated"),
    ])
    q = "zorblat"
    flat = [pid for pid, _ in build_index(c, 1 << 12).top_f(q, 10)]
    assert "Zorblat/1" not in flat
    two = [pid for pid, _ in two_stage_top_f(build_article_index(c, 1 << 12), c, q, 10, n_articles=1)]
    assert two == ["Zorblat/0", "Zorblat/1"]
    assert len(two_stage_top_f(build_article_index(c, 1 << 12), c, q, 1, n_articles=1)) == 1


def test_estimator_wrapper():
    est = TfidfRetriever(bucket_count=1 << 12).fit(three_docs())
    X = est.transform(["alpha", "beta"])
    assert X.shape == (2, 1 << 12)
    assert X[1].nnz == 0
    assert est.retrieve("alpha", 2)[0][0] == "a/0"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from(WORDS), min_size=1, max_size=8), min_size=1, max_size=15))
def test_index_invariants(docs):
    c = Corpus(para(f"d{i:02d}/0", " ".join(ws)) for i, ws in enumerate(docs))
    index = build_index(c, 1 << 8)
    assert all(w >= 0.0 and math.isfinite(w) for w in index.data.tolist())
    assert all(v <= index.num_docs for v in index.doc_freq.values())
    assert SparseIndex.from_bytes(index.to_bytes()).to_bytes() == index.to_bytes()
    for pid in index.doc_ids:
        assert set(index.doc_vector(pid)) <= {f for f, _ in text_features(c.text(pid), 1 << 8)}
