"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 data integrity, 3 numerical failure.
``--config`` reads ``key = value`` lines whose keys are option names of the
chosen subcommand (dashes or underscores); command-line flags win.
"""
import dataclasses
import argparse
import json
import logging
import os
import sys

from .errors import (ConfigError, DataIntegrityError, NumericalError, ReasonPathError,
                     UsageError)

log = logging.getLogger("reasonpath")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config_file(path):
    """Parse a ``key = value`` file; ``#`` starts a comment, quotes are stripped."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key.replace("-", "_")] = value
    return out


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _apply_config(sub, values):
    defaults = {}
    actions = {a.dest: a for a in sub._actions}
    for key, raw in values.items():
        if key in ("seed", "threads", "config", "command"):
            continue
        action = actions.get(key)
        if action is None or key == "help":
            raise ConfigError(f"unknown config key {key!r} for {sub.prog}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _parse_bool(raw)
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)


def _read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    from .errors import ParseError
                    raise ParseError(f"{path}: malformed JSON ({exc.msg})", line=lineno) from exc
    return out


def _write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")


def _texts(corpus_path):
    from .corpus import ingest_corpus

    corpus = ingest_corpus(corpus_path)
    return corpus, {p.para_id: p.text for p in corpus}


def _question_inputs(arg):
    """``[(qid, question)]`` from a questions JSONL file or a literal question."""
    if os.path.isfile(arg):
        return [(str(r["qid"]), r["question"]) for r in _read_jsonl(arg)]
    return [("q0", arg)]


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_synth(args):
    from .synthetic import SyntheticConfig, gen_synthetic

    cfg = SyntheticConfig(
        num_articles=args.articles, paragraphs_per_article=args.paragraphs_per_article,
        vocabulary_size=args.vocab, num_questions=args.questions,
        num_test_questions=args.test_questions, hop_mix=_mix(args.hop_mix),
        test_hop_mix=_mix(args.test_hop_mix) if args.test_hop_mix else None,
        bridge_overlap=args.bridge_overlap,
        disjoint_entities=not args.shared_entities, seed=args.seed)
    paths = gen_synthetic(cfg).write(args.out)
    for k in sorted(paths):
        print(f"{k}: {paths[k]}")


def _mix(text):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad hop mix {text!r}") from exc
    return vals


def cmd_build_index(args):
    from .tfidf import build_index

    corpus, _ = _texts(args.corpus)
    index = build_index(corpus, args.buckets, args.ngrams)
    index.save(args.out)
    print(f"indexed {index.num_docs} paragraphs, {len(index.indices)} nonzeros -> {args.out}")


def cmd_build_graph(args):
    from .corpus import build_graph

    corpus, _ = _texts(args.corpus)
    graph = build_graph(corpus, args.granularity)
    graph.save(args.out)
    r = graph.report
    print(f"nodes {len(graph)} edges {graph.num_edges} hyperlink {r.hyperlink_edges} "
          f"within-document {r.within_document_edges} dangling {r.dangling_links} "
          f"self {r.self_links} -> {args.out}")


def cmd_train_retriever(args):
    from .corpus import WikiGraph
    from .retriever import RecurrentRetriever
    from .supervision import build_retriever_examples, read_questions
    from .tfidf import SparseIndex

    corpus, texts = _texts(args.corpus)
    questions = read_questions(args.questions, corpus)
    index = SparseIndex.load(args.index)
    graph = WikiGraph.load(args.graph)
    examples = build_retriever_examples(questions, corpus, index, graph, args.negatives,
                                        args.f, augment=not args.no_augment)
    if args.examples_out:
        _write_jsonl([ex.to_record() for ex in examples], args.examples_out)
    items = [tp for ex in examples for tp in ex.training_paths()]
    model = RecurrentRetriever(d=args.d, bucket_count=args.encoder_buckets,
                               encoder_mode=args.encoder_mode, recurrent=not args.no_recurrence,
                               lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                               seed=args.seed)
    model.fit(items, texts, log=log.info)
    from .checkpoint import merge_into
    if args.merge:
        merge_into(args.out, model.to_tensors())
    else:
        model.save(args.out)
    print(f"trained on {len(items)} paths; final loss {model.loss_history_[-1]:.4f} -> {args.out}")


def cmd_train_reader(args):
    from .corpus import WikiGraph
    from .reader import PathReader
    from .supervision import AnswerType, build_reader_examples, read_questions
    from .tfidf import SparseIndex

    corpus, texts = _texts(args.corpus)
    questions = read_questions(args.questions, corpus)
    index = SparseIndex.load(args.index)
    graph = WikiGraph.load(args.graph) if args.graph else None
    examples = build_reader_examples(questions, corpus, index, args.f, args.negatives,
                                     distant=not args.no_distant, graph=graph,
                                     linked_negatives=args.linked_negatives,
                                     removal=args.removal, extended=args.extended)
    if args.examples_out:
        _write_jsonl([ex.to_record() for ex in examples], args.examples_out)
    if args.answer_classes == "auto":
        classes = any(q.answer_type is not AnswerType.SPAN for q in questions)
    else:
        classes = args.answer_classes == "on"
    reader = PathReader(d=args.d, bucket_count=args.reader_buckets, answer_classes=classes,
                        lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                        seed=args.seed)
    reader.fit(examples, texts, log_fn=log.info)
    reader.save(args.out, merge=args.merge)
    print(f"trained on {len(examples)} examples; final loss {reader.loss_history_[-1]:.4f} "
          f"-> {args.out}")


def cmd_retrieve(args):
    from .corpus import WikiGraph
    from .retriever import RecurrentRetriever
    from .tfidf import SparseIndex

    _, texts = _texts(args.corpus)
    model = RecurrentRetriever.load(args.checkpoint)
    index = SparseIndex.load(args.index)
    graph = WikiGraph.load(args.graph)
    mode = args.mode
    if mode == "closed":
        raise UsageError("closed mode needs per-question pools; use the Python API")
    records = []
    for qid, question in _question_inputs(args.question):
        paths = model.retrieve(question, index, graph, texts, mode=mode, B=args.beam, F=args.f,
                               K=args.k, max_len=args.max_len)
        records.append({"qid": qid, "paths": [p.to_record() for p in paths]})
    _write_jsonl(records, args.out)
    print(f"retrieved paths for {len(records)} questions -> {args.out}")


def cmd_answer(args):
    from .reader import PathReader
    from .retriever import ReasoningPath

    _, texts = _texts(args.corpus)
    reader = PathReader.load(args.checkpoint)
    questions = {str(r["qid"]): r["question"] for r in _read_jsonl(args.questions)}
    out = []
    for rec in _read_jsonl(args.paths):
        qid = str(rec["qid"])
        if qid not in questions:
            raise DataIntegrityError(f"paths file has unknown qid {qid!r}")
        paths = [ReasoningPath(tuple(p["paragraphs"]), True, float(p.get("log_score", 0.0)))
                 for p in rec["paths"]]
        pred = reader.predict_one(questions[qid], paths, texts, qid=qid,
                                  rerank=not args.no_rerank)
        out.append(pred.to_record())
    _write_jsonl(out, args.out)
    print(f"answered {len(out)} questions -> {args.out}")


def cmd_evaluate(args):
    from .metrics import eval_answers, eval_retrieval
    from .supervision import read_questions

    corpus, texts = _texts(args.corpus)
    gold = {tq.qid: tq for tq in read_questions(args.questions, corpus)}
    result = {}
    if args.paths:
        recs = {str(r["qid"]): r for r in _read_jsonl(args.paths)}
        if args.union:
            pred = {q: [p["paragraphs"] for p in r["paths"]] or [[]] for q, r in recs.items()}
        else:
            pred = {q: (r["paths"][0]["paragraphs"] if r["paths"] else [])
                    for q, r in recs.items()}
        result.update(eval_retrieval(pred, gold, texts, union=args.union).to_record())
    if args.answers:
        recs = {str(r["qid"]): r.get("answer", "") for r in _read_jsonl(args.answers)}
        f1, em = eval_answers(recs, gold)
        result["answer_F1"], result["answer_EM"] = f1, em
    if not result:
        raise UsageError("evaluate needs --paths and/or --answers")
    text = json.dumps(result, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_experiment(args):
    from .experiment import DEFAULT_STRATEGIES, ExperimentConfig, run_experiment
    from .synthetic import SyntheticConfig

    syn = SyntheticConfig(num_articles=args.articles, num_questions=args.questions,
                          num_test_questions=args.test_questions, hop_mix=_mix(args.hop_mix),
                          test_hop_mix=_mix(args.test_hop_mix) if args.test_hop_mix else None,
                          bridge_overlap=args.bridge_overlap,
                          disjoint_entities=not args.shared_entities, seed=args.seed)
    cfg = ExperimentConfig(
        data_dir=args.data, synthetic=syn, index_buckets=args.buckets, d=args.d,
        encoder_mode=args.encoder_mode, retriever_epochs=args.retriever_epochs,
        retriever_batch_size=args.retriever_batch_size, retriever_lr=args.retriever_lr,
        negatives=args.negatives, beam=args.beam, F=args.f, K=args.k, max_len=args.max_len,
        reader_epochs=args.reader_epochs, reader_batch_size=args.reader_batch_size,
        reader_lr=args.reader_lr, reader_negatives=args.reader_negatives,
        reader_linked_negatives=args.reader_linked_negatives,
        reader_removal=not args.no_reader_removal, reader_extended=not args.no_reader_extended,
        answer_classes=args.answer_classes,
        strategies=args.strategies or DEFAULT_STRATEGIES, union=args.union, seed=args.seed)
    report = run_experiment(cfg)
    report.write(args.out)
    sys.stdout.write(report.to_text())


# --------------------------------------------------------------------------
# parser


def build_parser():
    def common_flags(suppress):
        # subcommand copies must not overwrite values given before the subcommand
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p = _Parser(add_help=False)
        p.add_argument("--seed", type=int, default=dflt(0))
        p.add_argument("--threads", type=int, default=dflt(1))
        p.add_argument("--config", default=dflt(None), help="key = value file")
        p.add_argument("-v", "--verbose", action="store_true", default=dflt(False))
        return p

    from .experiment import ExperimentConfig
    ed = {f.name: f.default for f in dataclasses.fields(ExperimentConfig)}
    common = common_flags(suppress=True)
    parser = _Parser(prog="reasonpath", parents=[common_flags(suppress=False)],
                     description="Reasoning-path retrieval over hyperlink graphs.")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    def sub(name, func, help_text):
        p = subs.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        return p

    p = sub("gen-synth", cmd_gen_synth, "generate the synthetic multi-hop benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--articles", type=int, default=2000)
    p.add_argument("--paragraphs-per-article", type=int, default=1)
    p.add_argument("--vocab", type=int, default=4000)
    p.add_argument("--questions", type=int, default=500)
    p.add_argument("--test-questions", type=int, default=500)
    p.add_argument("--hop-mix", default="0.3,0.6,0.1", help="one-hop,two-hop,comparison")
    p.add_argument("--test-hop-mix", default=None)
    p.add_argument("--bridge-overlap", action="store_true")
    p.add_argument("--shared-entities", action="store_true",
                   help="train and test questions may name the same entities")

    p = sub("build-index", cmd_build_index, "build the TF-IDF index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--buckets", type=int, default=1 << 24)
    p.add_argument("--ngrams", type=int, default=2)

    p = sub("build-graph", cmd_build_graph, "build the paragraph graph")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--granularity", choices=("all-paragraphs", "intro-only"),
                   default="all-paragraphs")

    p = sub("train-retriever", cmd_train_retriever, "train the recurrent retriever")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merge", action="store_true", help="add tensors to an existing checkpoint")
    p.add_argument("--examples-out", default=None)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--encoder-buckets", type=int, default=1 << 16)
    p.add_argument("--encoder-mode", choices=("question-dependent", "question-independent"),
                   default="question-dependent")
    p.add_argument("--no-recurrence", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--f", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=4)

    p = sub("train-reader", cmd_train_reader, "train the path reader")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--merge", action="store_true", help="add tensors to an existing checkpoint")
    p.add_argument("--examples-out", default=None)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--reader-buckets", type=int, default=1 << 16)
    p.add_argument("--answer-classes", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--negatives", type=int, default=1)
    p.add_argument("--no-distant", action="store_true")
    p.add_argument("--graph", default=None, help="graph file; needed by the options below")
    p.add_argument("--linked-negatives", type=int, default=0,
                   help="distorted paths swapping the last gold paragraph for its neighbors")
    p.add_argument("--removal", action="store_true",
                   help="distorted multi-hop paths without their last paragraph")
    p.add_argument("--extended", action="store_true",
                   help="single-paragraph gold paths plus one answer-free paragraph")
    p.add_argument("--f", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=120)

    p = sub("retrieve", cmd_retrieve, "retrieve reasoning paths")
    p.add_argument("--question", required=True, help="question text or questions JSONL file")
    p.add_argument("--mode", default="adaptive", help="adaptive|greedy|fixed:L|norec")
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--f", type=int, default=500)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--max-len", type=int, default=3)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub("answer", cmd_answer, "read answers from retrieved paths")
    p.add_argument("--questions", required=True)
    p.add_argument("--paths", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-rerank", action="store_true")

    p = sub("evaluate", cmd_evaluate, "score paths and/or answers")
    p.add_argument("--questions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--paths", default=None)
    p.add_argument("--answers", default=None)
    p.add_argument("--union", action="store_true", help="score the union of all beam paths")
    p.add_argument("--out", default=None)

    p = sub("experiment", cmd_experiment, "train and compare all strategies")
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="directory with corpus/train/test JSONL")
    p.add_argument("--articles", type=int, default=2000)
    p.add_argument("--questions", type=int, default=500)
    p.add_argument("--test-questions", type=int, default=500)
    p.add_argument("--hop-mix", default="0.3,0.6,0.1")
    p.add_argument("--test-hop-mix", default=None)
    p.add_argument("--bridge-overlap", action="store_true")
    p.add_argument("--shared-entities", action="store_true")
    p.add_argument("--buckets", type=int, default=1 << 24)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--encoder-mode", choices=("question-dependent", "question-independent"),
                   default="question-dependent")
    p.add_argument("--negatives", type=int, default=ed["negatives"])
    p.add_argument("--retriever-epochs", type=int, default=ed["retriever_epochs"])
    p.add_argument("--retriever-batch-size", type=int, default=ed["retriever_batch_size"])
    p.add_argument("--retriever-lr", type=float, default=ed["retriever_lr"])
    p.add_argument("--beam", type=int, default=ed["beam"])
    p.add_argument("--f", type=int, default=ed["F"])
    p.add_argument("--k", type=int, default=ed["K"])
    p.add_argument("--max-len", type=int, default=ed["max_len"])
    p.add_argument("--reader-epochs", type=int, default=ed["reader_epochs"])
    p.add_argument("--reader-batch-size", type=int, default=ed["reader_batch_size"])
    p.add_argument("--reader-lr", type=float, default=ed["reader_lr"])
    p.add_argument("--reader-negatives", type=int, default=ed["reader_negatives"])
    p.add_argument("--reader-linked-negatives", type=int, default=ed["reader_linked_negatives"])
    p.add_argument("--no-reader-removal", action="store_true")
    p.add_argument("--no-reader-extended", action="store_true")
    p.add_argument("--answer-classes", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--strategies", default=None, help="comma-separated strategy names")
    p.add_argument("--union", action="store_true")
    return parser, subs


def _run(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        raise UsageError("a subcommand is required (see --help)")
    if args.config:
        values = read_config_file(args.config)
        sub = subs.choices[args.command]
        _apply_config(sub, values)
        args = parser.parse_args(argv)
        for k in ("seed", "threads"):
            if k in values and f"--{k}" not in argv:
                try:
                    setattr(args, k, int(values[k]))
                except ValueError as exc:
                    raise ConfigError(f"bad value for {k}: {values[k]!r}") from exc
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=args.threads):
        args.func(args)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        _run(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataIntegrityError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ReasonPathError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
