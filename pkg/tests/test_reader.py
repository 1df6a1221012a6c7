import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reasonpath.errors import UsageError
from reasonpath.reader import (PathReader, ReaderParams, ReaderTrainConfig, answer, best_span,
                               classify_answer_type, encode_path, extract_span, featurize,
                               forward, init_reader_params, path_prob_from_u, reader_loss,
                               rerank_prob, span_distributions, train_reader)
from reasonpath.retriever import ReasoningPath
from reasonpath.supervision import AnswerType, PathLabel, ReaderExample

from gradcheck import max_rel_error, numeric_grad

TEXTS = {
    "a": "the red bridge spans the river",
    "b": "bortown hosts the glass festival every june",
    "c": "cove is a quiet fishing village",
}


def std(v, eps=1e-14):
    mu = sum(v) / len(v)
    sd = math.sqrt(sum((x - mu) ** 2 for x in v) / len(v) + eps)
    return [(x - mu) / sd for x in v]


def scalar_encode(p, inp):
    d = p.d
    E = p.embedding
    qw = inp.question_words
    s_q = [sum(E[f][k] for f in qw) / len(qw) if qw else 0.0 for k in range(d)]
    qs = [sum(p.question_proj[i][k] * s_q[k] for k in range(d)) for i in range(d)]
    reps = []
    for feats in inp.features:
        e = [sum(E[f][k] for f in feats) for k in range(d)]
        a = [math.tanh(e[i] + qs[i] + p.token_bias[i]) for i in range(d)]
        y = std(a)
        reps.append([p.token_gain[i] * y[i] + p.token_shift[i] for i in range(d)])
    mean = [sum(r[i] for r in reps) / len(reps) for i in range(d)]
    y2 = std(mean)
    return reps, [p.pool_gain[i] * y2[i] + p.pool_shift[i] for i in range(d)]


def jitter(p, seed):
    rng = np.random.default_rng(seed)
    for name in ("token_bias", "token_shift", "pool_shift"):
        setattr(p, name, rng.uniform(-0.3, 0.3, size=p.d))
    for name in ("token_gain", "pool_gain"):
        setattr(p, name, rng.uniform(0.5, 1.5, size=p.d))
    p.embedding = rng.uniform(-0.5, 0.5, size=p.embedding.shape)
    return p


@pytest.mark.parametrize("d", [2, 3])
def test_encode_path_matches_scalar_oracle(d):
    p = jitter(init_reader_params(d=d, bucket_count=16, seed=d), d)
    question = "where is the glass festival"
    inp = featurize(p, question, [TEXTS["a"], TEXTS["b"]])
    r, u, _ = forward(p, inp)
    reps, pooled = scalar_encode(p, inp)
    np.testing.assert_allclose(r, reps, rtol=0, atol=1e-12)
    np.testing.assert_allclose(u, pooled, rtol=0, atol=1e-12)


def test_encode_path_deterministic_and_order_sensitive():
    p = init_reader_params(d=8, bucket_count=64)
    _, u1 = encode_path(p, "q glass", [TEXTS["a"], TEXTS["b"]])
    _, u2 = encode_path(p, "q glass", [TEXTS["a"], TEXTS["b"]])
    _, u3 = encode_path(p, "q glass", [TEXTS["b"], TEXTS["a"]])
    np.testing.assert_array_equal(u1, u2)
    assert not np.array_equal(u1, u3)
    with pytest.raises(UsageError):
        featurize(p, "q", [])


def test_rerank_probability():
    p = init_reader_params(d=4, bucket_count=16)
    p.path[:] = 0.0
    assert rerank_prob(p, "q", [TEXTS["a"]]) == 0.5
    p.path = np.array([1.0, 0.5, 0.0, 0.0])
    u = np.array([1.4, 1.0, 7.0, -3.0])
    assert path_prob_from_u(p, u) == pytest.approx(1 / (1 + math.exp(-1.9)), abs=1e-15)
    assert path_prob_from_u(p, u) == pytest.approx(0.86989, abs=1e-5)
    q = p.copy()
    q.path = -p.path
    assert path_prob_from_u(q, u) == pytest.approx(1 - path_prob_from_u(p, u), abs=1e-15)


def test_best_span_hand_example():
    i, j, s = best_span([0.1, 0.6, 0.3], [0.2, 0.2, 0.6])
    assert (i, j) == (1, 2)
    assert s == pytest.approx(0.36, abs=1e-15)
    assert best_span([1.0], [1.0]) == (0, 0, 1.0)


def brute_span(ps, pe, max_len, segments):
    best = None
    for lo, hi in segments:
        for i, j in itertools.product(range(lo, hi), repeat=2):
            if i <= j < i + max_len:
                cand = (-(ps[i] * pe[j]), i, j)
                best = cand if best is None or cand < best else best
    return best[1], best[2], -best[0]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.floats(0, 1), min_size=len(a), max_size=len(a)),
                        st.integers(1, 5), st.integers(0, len(a)))))
def test_best_span_equals_brute_force(args):
    ps, pe, max_len, cut = args
    segments = [(0, cut), (cut, len(ps))] if 0 < cut < len(ps) else [(0, len(ps))]
    assert best_span(ps, pe, max_len, segments) == brute_span(ps, pe, max_len, segments)


def test_span_distributions_cover_paragraph_tokens_only():
    p = init_reader_params(d=8, bucket_count=64, seed=2)
    inp = featurize(p, "a long question with many words", [TEXTS["c"]])
    _, _, cache = forward(p, inp)
    ps, pe = span_distributions(p, cache)
    assert len(ps) == len(inp.para_positions) == 6
    assert abs(ps.sum() - 1) < 1e-9 and abs(pe.sum() - 1) < 1e-9
    assert inp.para_positions.min() > len(inp.question_words)
    i, j, _ = extract_span(p, "single", ["word"])
    assert (i, j) == (0, 0)


def test_answer_type_head():
    p = init_reader_params(d=4, bucket_count=16, use_answer_class=True)
    p.answer_class[:] = 0.0
    assert classify_answer_type(p, "is it", [TEXTS["a"]]) is AnswerType.SPAN
    p.answer_class[1] = 10.0 * encode_path(p, "is it", [TEXTS["a"]])[1]
    assert classify_answer_type(p, "is it", [TEXTS["a"]]) is AnswerType.YES
    pred = answer(p, "is it", [("a",)], TEXTS)
    assert pred.answer == "yes" and pred.span is None


def test_answer_selection_rules():
    p = init_reader_params(d=8, bucket_count=64, seed=4)
    q = "glass festival town"
    paths = [ReasoningPath(("a",), True, -0.1), ReasoningPath(("b",), True, -2.0),
             ReasoningPath(("c",), True, -1.0)]
    probs = {ids: rerank_prob(p, q, [TEXTS[i] for i in ids]) for ids in [("a",), ("b",), ("c",)]}
    best = max(probs, key=probs.get)
    pred = answer(p, q, paths, TEXTS)
    assert pred.path == best
    for perm in itertools.permutations(paths):
        again = answer(p, q, list(perm), TEXTS)
        assert (again.path, again.answer, again.s_read) == (pred.path, pred.answer, pred.s_read)
    assert answer(p, q, paths, TEXTS, rerank=False).path == ("a",)
    solo = answer(p, q, paths[1:2], TEXTS)
    assert solo.path == ("b",) and solo.answer
    assert answer(p, q, [], TEXTS).no_answer


def test_answer_ties_use_retriever_score():
    p = init_reader_params(d=4, bucket_count=16)
    p.path[:] = 0.0
    paths = [ReasoningPath(("c",), True, -3.0), ReasoningPath(("b",), True, -1.0)]
    assert answer(p, "q", paths, TEXTS).path == ("b",)


def test_decoded_answer_is_paragraph_text():
    p = init_reader_params(d=8, bucket_count=64, seed=1)
    pred = answer(p, "q", [("b", "c")], TEXTS)
    assert pred.answer.lower() in (TEXTS["b"] + " " + TEXTS["c"])
    i, j = pred.span
    assert 0 <= i <= j


def uniform_params():
    p = init_reader_params(d=4, bucket_count=16)
    p.start[:] = 0.0
    p.end[:] = 0.0
    p.path[:] = 0.0
    return p


def test_loss_scalar_oracles():
    p = uniform_params()
    texts = {"x": "alpha beta"}
    gold = ReaderExample("q", "question", ("x",), (0, 1))
    assert reader_loss(p, gold, texts)[0] == pytest.approx(3 * math.log(2), abs=1e-12)
    bad = ReaderExample("q", "question", ("x",), None, label=PathLabel.DISTORTED)
    loss, g = reader_loss(p, bad, texts)
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert not np.any(g["start"]) and not np.any(g["end"])
    with pytest.raises(UsageError):
        reader_loss(p, ReaderExample("q", "question", ("x",), (0, 5)), texts)


def reader_fixture(seed):
    rng = np.random.default_rng(seed)
    classes = seed % 3 == 2
    p = jitter(init_reader_params(d=4, bucket_count=16, use_answer_class=classes, seed=seed), seed)
    p.path = rng.uniform(-1, 1, size=4)
    ids = list(rng.choice(list(TEXTS), size=int(rng.integers(1, 3)), replace=False))
    n_tok = sum(len(TEXTS[i].split()) for i in ids)
    kind = seed % 4
    if kind == 0:
        ex = ReaderExample("q", "where is the festival", tuple(ids), None,
                           label=PathLabel.DISTORTED)
    elif classes and kind == 1:
        ex = ReaderExample("q", "is it a village", tuple(ids), None, AnswerType.YES)
    else:
        i = int(rng.integers(0, n_tok))
        ex = ReaderExample("q", "where is the festival", tuple(ids), (i, min(n_tok - 1, i + 2)))
    return p, ex


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients_match_finite_differences(seed):
    p, ex = reader_fixture(seed)
    _, g = reader_loss(p, ex, TEXTS)
    rows, vals = g.pop("embedding_rows")
    g["embedding"] = np.zeros_like(p.embedding)
    g["embedding"][rows] = vals

    def loss():
        return reader_loss(p, ex, TEXTS, with_grads=False)[0]

    for name in ReaderParams.TENSORS:
        num = numeric_grad(loss, getattr(p, name))
        assert max_rel_error(g[name], num) < 1e-4, name


def test_single_example_converges():
    p = init_reader_params(d=8, bucket_count=64)
    ex = ReaderExample("q", "where is the glass festival", ("b",), (3, 4))
    train_reader([ex], p, TEXTS, ReaderTrainConfig(epochs=500, batch_size=1, weight_decay=0.0))
    assert reader_loss(p, ex, TEXTS, with_grads=False)[0] < 0.05


def train_pair(seed=0):
    exs = [
        ReaderExample("q1", "where is the glass festival", ("b",), (3, 4)),
        ReaderExample("q1", "where is the glass festival", ("c",), None, label=PathLabel.DISTORTED),
        ReaderExample("q1", "where is the glass festival", ("a",), None, label=PathLabel.DISTORTED),
    ]
    p = init_reader_params(d=8, bucket_count=64, seed=seed)
    train_reader(exs, p, TEXTS, ReaderTrainConfig(epochs=60, batch_size=2, seed=seed))
    return p


def test_training_is_deterministic():
    a, b = train_pair(), train_pair()
    for k, v in a.to_tensors().items():
        assert v.tobytes() == b.to_tensors()[k].tobytes()
    with pytest.raises(UsageError):
        train_reader([], init_reader_params(d=4, bucket_count=16), TEXTS)


def test_reranking_recovers_gold_path_ranked_second():
    p = train_pair()
    q = "where is the glass festival"
    paths = [ReasoningPath(("c",), True, -0.2), ReasoningPath(("b",), True, -0.9)]
    pred = answer(p, q, paths, TEXTS)
    assert pred.path == ("b",)
    assert pred.answer == "glass festival"
    assert answer(p, q, paths, TEXTS, rerank=False).path == ("c",)


def test_estimator_roundtrip(tmp_path):
    exs = [ReaderExample("q1", "where is the glass festival", ("b",), (3, 4))]
    est = PathReader(d=4, bucket_count=16, epochs=3, batch_size=1).fit(exs, TEXTS)
    est.save(tmp_path / "r.bin")
    again = PathReader.load(tmp_path / "r.bin")
    for k, v in est.to_tensors().items():
        np.testing.assert_array_equal(v, again.to_tensors()[k])
    assert est.predict(["where"], [[("b",)]], TEXTS)[0].answer == \
        again.predict(["where"], [[("b",)]], TEXTS)[0].answer
