"""Retrieval and answer metrics.

Retrieval indicators per question, averaged:

* AR   -- some retrieved paragraph contains an answer string;
* PR   -- some gold paragraph is retrieved;
* P_EM -- every gold paragraph is retrieved.

Answer EM/F1 use SQuAD normalization (lowercase, drop punctuation and the
articles a/an/the, collapse whitespace), maximized over acceptable answers.
"""
import re
import string
from collections import Counter
from dataclasses import dataclass, field

from .errors import IntegrityError
from .retriever import EOE
from .text import contains_answer

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = frozenset(string.punctuation)


def normalize_answer(s):
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(prediction, truth):
    return float(normalize_answer(prediction) == normalize_answer(truth))


def f1(prediction, truth):
    pred = normalize_answer(prediction).split()
    gold = normalize_answer(truth).split()
    if not pred or not gold:
        return float(pred == gold and bool(pred))
    common = Counter(pred) & Counter(gold)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred)
    recall = same / len(gold)
    return 2 * precision * recall / (precision + recall)


def best_over(metric, prediction, answers):
    if not prediction:
        return 0.0
    return max((metric(prediction, a) for a in answers), default=0.0)


@dataclass
class Metrics:
    AR: float = 0.0
    PR: float = 0.0
    P_EM: float = 0.0
    answer_F1: float = None
    answer_EM: float = None
    per_question: dict = field(default_factory=dict)
    length_histogram: dict = field(default_factory=dict)

    def to_record(self, per_question=False):
        out = {"AR": self.AR, "PR": self.PR, "P_EM": self.P_EM,
               "answer_F1": self.answer_F1, "answer_EM": self.answer_EM,
               "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())}}
        if per_question:
            out["per_question"] = self.per_question
        return out


def _check_qids(predicted, gold):
    if set(predicted) != set(gold):
        missing = sorted(set(gold) - set(predicted))[:5]
        extra = sorted(set(predicted) - set(gold))[:5]
        raise IntegrityError(f"qid mismatch: missing {missing}, unexpected {extra}")


def _ids(path):
    if hasattr(path, "paragraphs"):
        path = path.paragraphs
    return [p for p in path if p != EOE]


def eval_retrieval(predicted, gold, texts, union=False):
    """Retrieval metrics.

    ``predicted`` maps qid to one path (ids or a ``ReasoningPath``), or to a
    list of paths when ``union`` is set (the union of their paragraphs is
    scored). ``gold`` maps qid to a ``TrainingQuestion``.
    """
    _check_qids(predicted, gold)
    m = Metrics()
    n = len(gold)
    if n == 0:
        return m
    hist = Counter()
    for qid in sorted(gold):
        tq = gold[qid]
        if union:
            ids = []
            for path in predicted[qid]:
                ids.extend(p for p in _ids(path) if p not in ids)
            hist[len(_ids(predicted[qid][0])) if predicted[qid] else 0] += 1
        else:
            ids = _ids(predicted[qid])
            hist[len(ids)] += 1
        got = set(ids)
        ar = float(any(contains_answer(texts[p], tq.answers) for p in ids))
        pr = float(any(g in got for g in tq.gold_paras))
        pem = float(all(g in got for g in tq.gold_paras))
        m.per_question[qid] = {"AR": ar, "PR": pr, "P_EM": pem, "path": ids}
        m.AR += ar
        m.PR += pr
        m.P_EM += pem
    m.AR /= n
    m.PR /= n
    m.P_EM /= n
    m.length_histogram = dict(sorted(hist.items()))
    return m


def eval_answers(predictions, gold):
    """``(F1, EM)`` averaged over questions; ``predictions`` maps qid to a string."""
    _check_qids(predictions, gold)
    if not gold:
        return 0.0, 0.0
    tf1 = tem = 0.0
    for qid in sorted(gold):
        pred = predictions[qid] or ""
        tf1 += best_over(f1, pred, gold[qid].answers)
        tem += best_over(exact_match, pred, gold[qid].answers)
    return tf1 / len(gold), tem / len(gold)


def path_length_histogram(paths):
    hist = Counter(len(_ids(p)) for p in paths)
    return dict(sorted(hist.items()))


def average_length(hist):
    total = sum(hist.values())
    return sum(k * v for k, v in hist.items()) / total if total else 0.0
