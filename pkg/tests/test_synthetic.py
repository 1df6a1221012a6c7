import pytest

from reasonpath.corpus import build_graph
from reasonpath.errors import ConfigError, GenerationError
from reasonpath.synthetic import (SyntheticConfig, check_synthetic, gen_synthetic,
                                  zero_overlap_violations)
from reasonpath.text import content_tokens


def small(**kw):
    base = dict(num_articles=80, num_questions=40, num_test_questions=40, vocabulary_size=400)
    base.update(kw)
    return SyntheticConfig(**base)


def test_byte_identical_per_seed(tmp_path):
    a = gen_synthetic(small(seed=3)).write(tmp_path / "a")
    b = gen_synthetic(small(seed=3)).write(tmp_path / "b")
    for key in a:
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read()
    c = gen_synthetic(small(seed=4)).write(tmp_path / "c")
    with open(a["train"], "rb") as fa, open(c["train"], "rb") as fc:
        assert fa.read() != fc.read()


def test_zero_overlap_and_unique_answering_path():
    data = gen_synthetic(small(hop_mix=(0.0, 1.0, 0.0)))
    assert zero_overlap_violations(data) == []
    graph = build_graph(data.corpus)
    check_synthetic(data, graph)
    for tq in data.train + data.test:
        first, bearing = tq.gold_paras
        assert bearing in graph.neighbors(first)
        assert not set(content_tokens(tq.question)) & set(content_tokens(data.corpus.text(bearing)))


def test_bridge_overlap_variant_mentions_bridge():
    data = gen_synthetic(small(hop_mix=(0.0, 1.0, 0.0), bridge_overlap=True))
    assert zero_overlap_violations(data)


def test_one_hop_mix_gives_single_paragraph_gold():
    data = gen_synthetic(small(hop_mix=(1.0, 0.0, 0.0)))
    assert all(len(tq.gold_paras) == 1 for tq in data.train + data.test)


def test_entity_split_keeps_train_and_test_apart():
    data = gen_synthetic(small(hop_mix=(0.0, 1.0, 0.0)))
    train = {p for tq in data.train for p in tq.gold_paras}
    test = {p for tq in data.test for p in tq.gold_paras}
    assert not train & test
    shared = gen_synthetic(small(hop_mix=(0.0, 1.0, 0.0), disjoint_entities=False))
    assert len(shared.corpus) == len(data.corpus)


def test_comparison_questions_are_yes_no():
    data = gen_synthetic(small(hop_mix=(0.0, 0.0, 1.0)))
    assert {tq.answer_type.value for tq in data.train} <= {"yes", "no"}
    assert all(tq.answers == (tq.answer_type.value,) for tq in data.train)


def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticConfig(hop_mix=(0.5, 0.4, 0.0))
    with pytest.raises(ConfigError):
        SyntheticConfig(num_articles=4)
    with pytest.raises(GenerationError):
        gen_synthetic(small(vocabulary_size=20))
