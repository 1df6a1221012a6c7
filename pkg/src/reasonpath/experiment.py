"""End-to-end experiment: build, train, run every strategy, report.

Strategies:

* ``adaptive`` / ``greedy`` / ``fixed:L`` / ``norec`` -- retriever search modes;
  retrieval metrics use the top-1 path, answers come from the reader
  re-ranking the beam.
* ``no-rerank`` -- adaptive beam, reader reads the top-1 path only.
* ``tfidf_top2`` / ``rerank`` / ``rerank_2hop`` -- two-paragraph baselines.

``norec`` and the re-rank baselines share one retriever trained without
recurrence.
"""
import json
import logging
import os
import time
from collections import Counter
from dataclasses import asdict, dataclass, field

from . import baselines
from .corpus import Corpus, build_graph, ingest_corpus
from .errors import ConfigError, UsageError
from .metrics import average_length, eval_answers, eval_retrieval
from .reader import PathReader
from .retriever import RecurrentRetriever, RetrievalConfig
from .supervision import (AnswerType, build_reader_examples, build_reader_negatives,
                          build_retriever_examples, derive_gold_path, read_questions)
from .synthetic import SyntheticConfig, gen_synthetic
from .tfidf import build_index

log = logging.getLogger(__name__)

DEFAULT_STRATEGIES = ("adaptive", "greedy", "fixed:1", "fixed:2", "norec", "no-rerank",
                      "tfidf_top2", "rerank", "rerank_2hop")
RETRIEVER_MODES = ("adaptive", "greedy", "norec")


@dataclass
class ExperimentConfig:
    data_dir: str = None  # corpus.jsonl / train.jsonl / test.jsonl; synthetic if unset
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    index_buckets: int = 1 << 24
    ngrams: int = 2
    d: int = 64
    encoder_buckets: int = 1 << 16
    encoder_mode: str = "question-dependent"
    retriever_lr: float = 1e-2
    retriever_epochs: int = 12
    retriever_batch_size: int = 4
    negatives: int = 50
    augment: bool = True
    beam: int = 8
    F: int = 20
    K: int = 1
    max_len: int = 3
    reader_d: int = 64
    reader_buckets: int = 1 << 16
    reader_lr: float = 1e-2
    reader_epochs: int = 20
    reader_batch_size: int = 16
    reader_negatives: int = 1
    reader_linked_negatives: int = 3
    reader_removal: bool = True
    reader_extended: bool = True
    distant: bool = True
    answer_classes: str = "auto"  # auto | on | off
    strategies: tuple = DEFAULT_STRATEGIES
    union: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = SyntheticConfig(**self.synthetic)
        if isinstance(self.strategies, str):
            self.strategies = tuple(s.strip() for s in self.strategies.split(",") if s.strip())
        self.strategies = tuple(self.strategies)
        for s in self.strategies:
            if s not in DEFAULT_STRATEGIES and not s.startswith("fixed:"):
                raise ConfigError(f"unknown strategy {s!r}")
        if self.answer_classes not in ("auto", "on", "off"):
            raise ConfigError("answer_classes must be auto, on or off")

    def to_record(self):
        rec = asdict(self)
        rec["strategies"] = list(self.strategies)
        return rec


@dataclass
class ExperimentReport:
    rows: list
    summary: dict
    config: dict

    def to_json(self):
        return json.dumps({"config": self.config, "rows": self.rows, "summary": self.summary},
                          sort_keys=True, indent=2) + "\n"

    def to_text(self):
        cols = ("strategy", "AR", "PR", "P_EM", "F1", "EM", "avg_len", "reader_len", "2hop_P_EM",
                "2hop_EM")
        lines = ["  ".join(f"{c:>11}" for c in cols)]
        for r in self.rows:
            vals = [r["strategy"], r["AR"], r["PR"], r["P_EM"], r["answer_F1"], r["answer_EM"],
                    r["avg_len"], r["reader_avg_len"], r["by_kind"].get("two-hop", {}).get("P_EM"),
                    r["by_kind"].get("two-hop", {}).get("answer_EM")]
            lines.append("  ".join(f"{v:>11}" if isinstance(v, str) else
                                   ("{:>11}".format("-") if v is None else f"{v:>11.4f}")
                                   for v in vals))
        lines.append("")
        lines.append("path-length histograms (retriever top-1 / reader-selected):")
        for r in self.rows:
            lines.append(f"  {r['strategy']:>11}: {r['length_histogram']} / "
                         f"{r['reader_length_histogram']}")
        lines.append("")
        for k in sorted(self.summary):
            lines.append(f"{k}: {self.summary[k]}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def question_kind(tq):
    if tq.answer_type is not AnswerType.SPAN:
        return "comparison"
    return "two-hop" if len(tq.gold_paras) > 1 else "one-hop"


def load_data(cfg):
    if cfg.data_dir is None:
        data = gen_synthetic(cfg.synthetic)
        return data.corpus, data.train, data.test
    paths = {k: os.path.join(cfg.data_dir, f"{k}.jsonl") for k in ("corpus", "train", "test")}
    for k, p in paths.items():
        if not os.path.exists(p):
            raise UsageError(f"experiment data directory lacks {k} file {p}")
    corpus = ingest_corpus(paths["corpus"])
    return corpus, read_questions(paths["train"], corpus), read_questions(paths["test"], corpus)


@dataclass
class Artifacts:
    corpus: Corpus
    train: list
    test: list
    texts: dict
    index: object
    graph: object
    retriever: RecurrentRetriever
    flat_retriever: RecurrentRetriever
    reader: PathReader


def _needs(strategies, names):
    return any(s in names for s in strategies)


def build_artifacts(cfg, timings=None):
    timings = {} if timings is None else timings
    t0 = time.perf_counter()
    corpus, train, test = load_data(cfg)
    texts = {p.para_id: p.text for p in corpus}
    index = build_index(corpus, cfg.index_buckets, cfg.ngrams)
    graph = build_graph(corpus)
    timings["build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    examples = build_retriever_examples(train, corpus, index, graph, cfg.negatives, cfg.F,
                                        cfg.augment)
    items = [tp for ex in examples for tp in ex.training_paths()]
    common = dict(d=cfg.d, bucket_count=cfg.encoder_buckets, encoder_mode=cfg.encoder_mode,
                  beam_size=cfg.beam, F=cfg.F, K=cfg.K, max_len=cfg.max_len, lr=cfg.retriever_lr,
                  epochs=cfg.retriever_epochs, batch_size=cfg.retriever_batch_size, seed=cfg.seed)
    retriever = RecurrentRetriever(recurrent=True, **common).fit(items, texts, log=log.info)
    flat = None
    if _needs(cfg.strategies, ("norec", "rerank", "rerank_2hop")):
        flat = RecurrentRetriever(recurrent=False, **common).fit(items, texts, log=log.info)
    timings["train_retriever"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rex = build_reader_examples(train, corpus, index, cfg.F, cfg.reader_negatives, cfg.distant,
                                graph=graph, linked_negatives=cfg.reader_linked_negatives,
                                removal=cfg.reader_removal, extended=cfg.reader_extended)
    has_yes_no = any(tq.answer_type is not AnswerType.SPAN for tq in train)
    classes = cfg.answer_classes == "on" or (cfg.answer_classes == "auto" and has_yes_no)
    reader = PathReader(d=cfg.reader_d, bucket_count=cfg.reader_buckets, answer_classes=classes,
                        lr=cfg.reader_lr, epochs=cfg.reader_epochs,
                        batch_size=cfg.reader_batch_size, seed=cfg.seed)
    reader.fit(rex, texts, log_fn=log.info)
    timings["train_reader"] = time.perf_counter() - t0
    return Artifacts(corpus, train, test, texts, index, graph, retriever, flat, reader)


def _strategy_paths(name, art, cfg):
    """Per test question: ``(top-1 path ids, candidate paths for the reader)``."""
    out = {}
    for tq in art.test:
        q = tq.question
        if name in ("adaptive", "no-rerank") or name in ("greedy",) or name.startswith("fixed:"):
            mode = "adaptive" if name == "no-rerank" else name
            paths = art.retriever.retrieve(q, art.index, art.graph, art.texts, mode=mode)
            out[tq.qid] = (paths[0].paragraphs if paths else (), paths)
        elif name == "norec":
            paths = art.flat_retriever.retrieve(q, art.index, art.graph, art.texts, mode="norec")
            out[tq.qid] = (paths[0].paragraphs if paths else (), paths)
        elif name == "tfidf_top2":
            p = baselines.baseline_tfidf_top2(q, art.index)
            out[tq.qid] = (p, [p] if p else [])
        elif name == "rerank":
            p = baselines.baseline_rerank(q, art.index, art.flat_retriever, art.texts, cfg.F)
            out[tq.qid] = (p, [p] if p else [])
        elif name == "rerank_2hop":
            p = baselines.baseline_rerank_2hop(q, art.index, art.graph, art.flat_retriever,
                                               art.texts, cfg.F)
            out[tq.qid] = (p, [p] if p else [])
        else:
            raise ConfigError(f"unknown strategy {name!r}")
    return out


def evaluate_strategy(name, art, cfg, cache=None):
    cache = {} if cache is None else cache
    key = "adaptive" if name == "no-rerank" else name
    if key not in cache:
        cache[key] = _strategy_paths(key, art, cfg)
    results = cache[key]
    gold = {tq.qid: tq for tq in art.test}
    if cfg.union:
        predicted = {qid: [getattr(p, "paragraphs", p) for p in results[qid][1]] or [()]
                     for qid in gold}
    else:
        predicted = {qid: results[qid][0] for qid in gold}
    m = eval_retrieval(predicted, gold, art.texts, union=cfg.union)

    answers = {}
    chosen = {}
    rerank = name != "no-rerank"
    for tq in art.test:
        pred = art.reader.predict_one(tq.question, results[tq.qid][1], art.texts, qid=tq.qid,
                                      rerank=rerank)
        answers[tq.qid] = pred.answer
        chosen[tq.qid] = pred.path
    f1, em = eval_answers(answers, gold)
    reader_m = eval_retrieval(chosen, gold, art.texts)

    by_kind = {}
    kinds = {tq.qid: question_kind(tq) for tq in art.test}
    for kind in sorted(set(kinds.values())):
        sub = {q: g for q, g in gold.items() if kinds[q] == kind}
        km = eval_retrieval({q: predicted[q] for q in sub}, sub, art.texts, union=cfg.union)
        kf1, kem = eval_answers({q: answers[q] for q in sub}, sub)
        by_kind[kind] = {"n": len(sub), "AR": km.AR, "PR": km.PR, "P_EM": km.P_EM,
                         "answer_F1": kf1, "answer_EM": kem}
    return {
        "strategy": name, "AR": m.AR, "PR": m.PR, "P_EM": m.P_EM,
        "answer_F1": f1, "answer_EM": em,
        "avg_len": average_length(m.length_histogram),
        "reader_avg_len": average_length(reader_m.length_histogram),
        "reader_P_EM": reader_m.P_EM,
        "length_histogram": {str(k): v for k, v in m.length_histogram.items()},
        "reader_length_histogram": {str(k): v for k, v in reader_m.length_histogram.items()},
        "by_kind": by_kind,
        "answers": answers,
        "top1": {q: list(p) for q, p in predicted.items()} if not cfg.union else None,
    }


def adaptive_length_accuracy(art, cache, cfg):
    if "adaptive" not in cache:
        cache["adaptive"] = _strategy_paths("adaptive", art, cfg)
    hits = [len(cache["adaptive"][tq.qid][0]) == len(tq.gold_paras) for tq in art.test]
    return sum(hits) / len(hits) if hits else 0.0


def discrimination_accuracy(art, cfg):
    """Share of held-out (gold, distorted) pairs where the gold path scores higher."""
    wins = total = 0
    for tq in art.test:
        gold = derive_gold_path(tq, art.corpus)
        for neg in build_reader_negatives(tq, gold, art.index, art.corpus, cfg.F, 1):
            g = art.reader.path_prob(tq.question, [p for p in gold if p != "[EOE]"], art.texts)
            d = art.reader.path_prob(tq.question, neg.path, art.texts)
            wins += g > d
            total += 1
    return wins / total if total else 0.0, total


def run_experiment(cfg, artifacts=None):
    """Train (unless ``artifacts`` is given) and evaluate every enabled strategy."""
    timings = {}
    art = artifacts if artifacts is not None else build_artifacts(cfg, timings)
    t0 = time.perf_counter()
    cache = {}
    rows = [evaluate_strategy(s, art, cfg, cache) for s in cfg.strategies]
    summary = {
        "n_test": len(art.test),
        "n_train": len(art.train),
        "test_kinds": dict(sorted(Counter(question_kind(t) for t in art.test).items())),
    }
    if any(s in cache for s in ("adaptive",)):
        summary["adaptive_length_accuracy"] = adaptive_length_accuracy(art, cache, cfg)
    acc, n = discrimination_accuracy(art, cfg)
    summary["discrimination_accuracy"] = acc
    summary["discrimination_pairs"] = n
    timings["evaluate"] = time.perf_counter() - t0
    for k, v in timings.items():
        log.info("timing %s: %.1fs", k, v)
    for r in rows:
        r.pop("answers")
        r.pop("top1")
    return ExperimentReport(rows, summary, cfg.to_record())
