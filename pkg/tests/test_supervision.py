import json

import pytest
from hypothesis import given, settings, strategies as st

from reasonpath.corpus import Corpus, WikiGraph, build_graph
from reasonpath.errors import IntegrityError, OrderingError, UsageError
from reasonpath.retriever import EOE
from reasonpath.supervision import (AnswerType, Origin, PathLabel, ReaderExample,
                                    TrainingQuestion, augment_paths, build_distant_examples,
                                    build_linked_reader_negatives, build_reader_examples,
                                    build_reader_negatives, build_retriever_example,
                                    derive_gold_path, locate_span, mine_negatives,
                                    read_questions, write_questions)
from reasonpath.text import contains_answer
from reasonpath.tfidf import build_index

from conftest import para


def world():
    paras = [
        para("Ann/0", "ann grew up in bortown near the coast", links=("Bortown",)),
        para("Bortown/0", "bortown hosts the glass festival", links=("Cove", "Dell")),
        para("Cove/0", "cove is a quiet fishing village"),
        para("Dell/0", "dell makes wooden chairs"),
        para("Fen/0", "fen ann visited bortown once", links=("Ann",)),
        para("Gale/0", "gale hosts the glass festival too"),
        para("Hill/0", "hill has tall pines"),
        para("Isle/0", "isle has sandy beaches"),
    ]
    corpus = Corpus(paras)
    return corpus, build_graph(corpus), build_index(corpus, 1 << 14)


def q(gold, answers=("glass festival",), qid="q1", text="what does the town where ann grew up host",
      **kw):
    return TrainingQuestion(qid, text, answers, gold, **kw)


def test_gold_path_rules():
    corpus, _, _ = world()
    assert derive_gold_path(q(("Ann/0",), answers=("ann",)), corpus) == ("Ann/0", EOE)
    assert derive_gold_path(q(("Ann/0", "Bortown/0")), corpus) == ("Ann/0", "Bortown/0", EOE)
    assert derive_gold_path(q(("Bortown/0", "Ann/0")), corpus) == ("Ann/0", "Bortown/0", EOE)
    with pytest.raises(OrderingError):
        derive_gold_path(q(("Ann/0", "Cove/0"), answers=("nothing here",)), corpus)


def test_gold_path_tie_broken_by_link_direction():
    corpus, _, _ = world()
    tq = q(("Bortown/0", "Fen/0"), answers=("bortown",))
    # Fen links to Ann, not to Bortown; Bortown does not link to Fen either: annotated order
    assert derive_gold_path(tq, corpus) == ("Bortown/0", "Fen/0", EOE)
    tq = q(("Bortown/0", "Ann/0"), answers=("bortown",))
    assert derive_gold_path(tq, corpus) == ("Ann/0", "Bortown/0", EOE)
    tq = q(("Bortown/0", "Ann/0"), answers=("bortown",), answer_bearing="Ann/0")
    assert derive_gold_path(tq, corpus) == ("Bortown/0", "Ann/0", EOE)


def test_augmentation():
    _, graph, _ = world()
    gold = ("Ann/0", "Bortown/0", EOE)
    assert augment_paths(gold, ["Ann/0", "Fen/0", "Cove/0"], graph) == ("Fen/0",) + gold
    assert augment_paths(gold, ["Cove/0", "Hill/0"], graph) is None


def test_negatives_structure():
    corpus, graph, index = world()
    tq = q(("Ann/0", "Bortown/0"))
    gold = derive_gold_path(tq, corpus)
    ranked = [pid for pid, _ in index.top_f(tq.question, 50)]
    negs = mine_negatives(tq, gold, ranked, graph, corpus, n=50, exclude=("Fen/0",))
    assert len(negs) == 3
    assert EOE in negs[0] and EOE in negs[1] and EOE not in negs[2]
    assert "Fen/0" not in negs[0]
    for t, g in enumerate(gold):
        assert g not in negs[t]
    # Ann's only out-neighbor is the gold Bortown, so step 2 draws from the ranking only
    hop = mine_negatives(tq, ("Bortown/0", "Cove/0", EOE), ranked, graph, corpus,
                         n=3)
    assert hop[1][:1] == ("Dell/0",)
    assert len(hop[1]) == 3


def test_single_hop_negatives_are_tfidf_only():
    corpus, graph, index = world()
    tq = q(("Gale/0",), answers=("glass festival",), text="glass festival hosts")
    gold = derive_gold_path(tq, corpus)
    ranked = [pid for pid, _ in index.top_f(tq.question, 50)]
    negs = mine_negatives(tq, gold, ranked, graph, corpus, n=50)
    for step in negs:
        assert set(step) - {EOE} <= set(ranked)


def test_negative_cap():
    corpus, graph, index = world()
    ex = build_retriever_example(q(("Ann/0", "Bortown/0")), corpus, index, graph, n=2)
    assert all(len(s) <= 2 for s in ex.negatives)


def test_distant_supervision_first_match():
    corpus, _, index = world()
    tq = q(("Bortown/0",), text="glass festival town")
    [ex] = build_distant_examples(tq, index, corpus)
    assert ex.path == ("Gale/0",) and ex.origin is Origin.DISTANT
    assert ex.span == (3, 4)
    assert build_distant_examples(q(("Bortown/0",), answers=("zzz",)), index, corpus) == []


def test_locate_span_first_occurrence():
    texts = ["alpha beta", "gamma beta delta beta"]
    assert locate_span(texts, ["beta"]) == (3, 3)
    assert locate_span(texts, ["beta"], prefer_last=False) == (1, 1)
    assert locate_span(texts, ["omega"]) is None


def test_reader_negatives():
    corpus, graph, index = world()
    tq = q(("Ann/0", "Bortown/0"))
    gold = derive_gold_path(tq, corpus)
    negs = build_reader_negatives(tq, gold, index, corpus, count=2)
    assert negs and all(n.label is PathLabel.DISTORTED and n.span is None for n in negs)
    assert all(n.path[0] == "Ann/0" and len(n.path) == 2 for n in negs)
    linked = build_linked_reader_negatives(tq, gold, graph, corpus, count=3, removal=True)
    assert [n.path for n in linked] == [("Ann/0",)]
    assert build_linked_reader_negatives(q(("Ann/0",), answers=("ann",)),
                                         ("Ann/0", EOE), graph, corpus) == []
    all_bad = q(("Ann/0", "Bortown/0"), answers=("the",))
    assert build_reader_negatives(all_bad, gold, index, corpus) == []


def test_reader_example_validation():
    with pytest.raises(IntegrityError):
        ReaderExample("q", "x", ("a",), (0, 1), label=PathLabel.DISTORTED)
    with pytest.raises(IntegrityError):
        ReaderExample("q", "x", ("a",), (2, 1))
    with pytest.raises(UsageError):
        build_reader_examples([], *world()[::2], extended=True)


def test_build_reader_examples_invariants():
    corpus, graph, index = world()
    qs = [q(("Ann/0", "Bortown/0")), q(("Cove/0",), answers=("fishing village",), qid="q2",
                                     text="which village fishes near tall pines")]
    exs = build_reader_examples(qs, corpus, index, graph=graph, linked_negatives=3, removal=True,
                                extended=True)
    answers = {t.qid: t.answers for t in qs}
    for ex in exs:
        if ex.label is PathLabel.DISTORTED:
            assert not any(contains_answer(corpus.text(p), answers[ex.qid]) for p in ex.path)
        else:
            assert ex.span is not None
    assert exs == build_reader_examples(qs, corpus, index, graph=graph, linked_negatives=3,
                                        removal=True, extended=True)
    ext = [e for e in exs if e.qid == "q2" and len(e.path) == 2 and e.label is PathLabel.GOLD]
    assert ext and ext[0].path[0] == "Cove/0"


def test_question_file_roundtrip(tmp_path):
    corpus, _, _ = world()
    qs = [q(("Ann/0", "Bortown/0")), q(("Hill/0",), answers=(), qid="q2", answer_type="yes")]
    path = tmp_path / "q.jsonl"
    write_questions(qs, path)
    assert read_questions(path, corpus) == qs
    path.write_text(path.read_text() + json.dumps(qs[0].to_record()) + "\n")
    with pytest.raises(IntegrityError):
        read_questions(path)


@settings(max_examples=25, deadline=None)
@given(st.permutations(["Ann/0", "Bortown/0", "Cove/0", "Dell/0", "Fen/0", "Gale/0"]),
       st.integers(1, 6))
def test_retriever_example_invariants(order, n):
    corpus, graph, index = world()
    tq = q(("Ann/0", "Bortown/0"))
    gold = derive_gold_path(tq, corpus)
    aug = augment_paths(gold, order, graph)
    exclude = (aug[0],) if aug else ()
    negs = mine_negatives(tq, gold, order, graph, corpus, n=n, exclude=exclude)
    for t, g in enumerate(gold):
        assert g not in negs[t]
        assert (EOE in negs[t]) == (t < len(gold) - 1)
        assert len(negs[t]) <= n
    if aug:
        assert aug[0] not in negs[0]
