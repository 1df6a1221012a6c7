"""Training-example construction for the retriever and the reader.

Retriever supervision is a gold path ending in [EOE], an optional augmented
path that prepends a high-ranked TF-IDF paragraph linking to the first gold
paragraph, and per-step negative sets. Reader supervision covers annotated
gold paths, distantly supervised single paragraphs, and distorted paths.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum

from .errors import IntegrityError, OrderingError, ParseError, UsageError
from .retriever import EOE, TrainingPath
from .text import contains_answer, find_answer, tokenize

log = logging.getLogger(__name__)

DEFAULT_NEGATIVES = 50


class AnswerType(str, Enum):
    SPAN = "span"
    YES = "yes"
    NO = "no"


@dataclass(frozen=True)
class TrainingQuestion:
    qid: str
    question: str
    answers: tuple
    gold_paras: tuple
    answer_bearing: str = None
    answer_type: AnswerType = AnswerType.SPAN

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        object.__setattr__(self, "gold_paras", tuple(self.gold_paras))
        object.__setattr__(self, "answer_type", AnswerType(self.answer_type))

    @property
    def is_multi_hop(self):
        return len(self.gold_paras) > 1

    def validate(self, corpus=None):
        if self.answer_type is AnswerType.SPAN and not self.answers:
            raise IntegrityError(f"{self.qid}: span question without answers")
        if not 1 <= len(self.gold_paras) <= 2:
            raise IntegrityError(f"{self.qid}: expected 1 or 2 gold paragraphs")
        if corpus is not None:
            for pid in self.gold_paras:
                if pid not in corpus:
                    raise IntegrityError(f"{self.qid}: gold paragraph {pid!r} not in corpus")
        return self

    def to_record(self):
        return {"qid": self.qid, "question": self.question, "answers": list(self.answers),
                "gold_paras": list(self.gold_paras), "answer_bearing": self.answer_bearing,
                "answer_type": self.answer_type.value}

    @classmethod
    def from_record(cls, rec):
        return cls(qid=str(rec["qid"]), question=rec["question"],
                   answers=tuple(rec.get("answers") or ()),
                   gold_paras=tuple(rec.get("gold_paras") or ()),
                   answer_bearing=rec.get("answer_bearing"),
                   answer_type=rec.get("answer_type", "span"))


def read_questions(path, corpus=None):
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                tq = TrainingQuestion.from_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad question record: {exc}", line=lineno) from exc
            if tq.qid in seen:
                raise IntegrityError(f"duplicate qid {tq.qid!r} on line {lineno}")
            seen.add(tq.qid)
            out.append(tq.validate(corpus))
    return out


def write_questions(questions, path):
    with open(path, "w", encoding="utf-8") as fh:
        for tq in questions:
            fh.write(json.dumps(tq.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# retriever supervision


def _links_to(corpus, src, dst):
    return corpus[dst].article_title in corpus[src].out_links


def derive_gold_path(tq, corpus):
    """Gold path ``(p, EOE)`` or ``(p1, p2, EOE)`` with the answer-bearing paragraph last.

    Yes/no questions keep the annotated order. When both paragraphs contain an
    answer, an explicit ``answer_bearing`` wins, then link direction (the
    paragraph that links to the other goes first), then annotated order.
    """
    if len(tq.gold_paras) == 1:
        return (tq.gold_paras[0], EOE)
    p1, p2 = tq.gold_paras
    if tq.answer_type is not AnswerType.SPAN:
        return (p1, p2, EOE)
    has1 = contains_answer(corpus.text(p1), tq.answers)
    has2 = contains_answer(corpus.text(p2), tq.answers)
    if not (has1 or has2):
        raise OrderingError(f"{tq.qid}: no gold paragraph contains an answer string")
    if has1 and not has2:
        return (p2, p1, EOE)
    if has2 and not has1:
        return (p1, p2, EOE)
    if tq.answer_bearing in (p1, p2):
        first = p2 if tq.answer_bearing == p1 else p1
        return (first, tq.answer_bearing, EOE)
    if _links_to(corpus, p2, p1) and not _links_to(corpus, p1, p2):
        return (p2, p1, EOE)
    return (p1, p2, EOE)


def augment_paths(gold_path, c1, graph):
    """Prepend the best-ranked member of ``c1`` that links to the first gold paragraph.

    ``c1`` is the TF-IDF ranking (ids, best first). Returns ``None`` when no
    member qualifies.
    """
    first = gold_path[0]
    for pid in c1:
        if pid in gold_path or pid not in graph:
            continue
        if first in graph.neighbors(pid):
            return (pid,) + tuple(gold_path)
    return None


def mine_negatives(tq, gold_path, ranked, graph, corpus, n=DEFAULT_NEGATIVES, exclude=()):
    """Per-step negative sets for ``gold_path`` (one set per element, [EOE] step included).

    ``ranked`` is the TF-IDF ranking for the question. Step 1 draws from the
    ranking; later steps start from the previous gold paragraph's neighbors that
    hold no answer string and top up from the ranking. Single-hop questions use
    the ranking only. [EOE] is a negative at every step whose gold is a paragraph.
    Each set holds at most ``n`` entries.
    """
    members = set(gold_path) | set(exclude)
    multi_hop = tq.is_multi_hop
    out = []
    for t, gold in enumerate(gold_path):
        with_eoe = gold != EOE
        cap = n - 1 if with_eoe else n
        chosen = []
        if multi_hop and t >= 1:
            for nb in graph.neighbors(gold_path[t - 1]):
                if len(chosen) >= cap:
                    break
                if nb in members or contains_answer(corpus.text(nb), tq.answers):
                    continue
                chosen.append(nb)
        taken = set(chosen)
        for pid in ranked:
            if len(chosen) >= cap:
                break
            if pid not in members and pid not in taken:
                chosen.append(pid)
                taken.add(pid)
        if with_eoe and n > 0:
            chosen.append(EOE)
        out.append(tuple(chosen))
    return tuple(out)


@dataclass(frozen=True)
class RetrieverExample:
    qid: str
    question: str
    path: tuple
    negatives: tuple
    augmented_path: tuple = None
    augmented_negatives: tuple = None

    def training_paths(self):
        out = [TrainingPath(self.question, self.path, self.negatives)]
        if self.augmented_path is not None:
            out.append(TrainingPath(self.question, self.augmented_path, self.augmented_negatives))
        return out

    def to_record(self):
        return {"qid": self.qid, "question": self.question, "path": list(self.path),
                "negatives": [list(s) for s in self.negatives],
                "augmented_path": None if self.augmented_path is None else list(self.augmented_path),
                "augmented_negatives": None if self.augmented_negatives is None
                else [list(s) for s in self.augmented_negatives]}


def build_retriever_example(tq, corpus, index, graph, n=DEFAULT_NEGATIVES, F=None,
                            augment=True):
    """Gold path, optional augmented path, and negatives for one question."""
    gold = derive_gold_path(tq, corpus)
    pool = max(F or 0, n + len(gold) + 1)
    ranked = [pid for pid, _ in index.top_f(tq.question, pool)]
    c1 = ranked[:F] if F else ranked
    aug = augment_paths(gold, c1, graph) if augment else None
    exclude = (aug[0],) if aug else ()
    negs = mine_negatives(tq, gold, ranked, graph, corpus, n, exclude=exclude)
    aug_negs = mine_negatives(tq, aug, ranked, graph, corpus, n) if aug else None
    return RetrieverExample(tq.qid, tq.question, gold, negs, aug, aug_negs)


def build_retriever_examples(questions, corpus, index, graph, n=DEFAULT_NEGATIVES, F=None,
                             augment=True):
    return [build_retriever_example(tq, corpus, index, graph, n, F, augment) for tq in questions]


# --------------------------------------------------------------------------
# reader supervision


class PathLabel(str, Enum):
    GOLD = "gold"
    DISTORTED = "distorted"


class Origin(str, Enum):
    SUPERVISED = "supervised"
    DISTANT = "distant"


@dataclass(frozen=True)
class ReaderExample:
    """``span`` indexes the concatenated paragraph tokens of ``path`` (0-based, inclusive)."""

    qid: str
    question: str
    path: tuple
    span: tuple = None
    answer_type: AnswerType = AnswerType.SPAN
    label: PathLabel = PathLabel.GOLD
    origin: Origin = Origin.SUPERVISED
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))
        object.__setattr__(self, "answer_type", AnswerType(self.answer_type))
        object.__setattr__(self, "label", PathLabel(self.label))
        object.__setattr__(self, "origin", Origin(self.origin))
        if self.span is not None:
            i, j = self.span
            if not 0 <= i <= j:
                raise IntegrityError(f"{self.qid}: invalid span {self.span}")
            object.__setattr__(self, "span", (int(i), int(j)))
            if self.label is PathLabel.DISTORTED:
                raise IntegrityError(f"{self.qid}: distorted examples carry no span")

    def to_record(self):
        return {"qid": self.qid, "question": self.question, "path": list(self.path),
                "span": None if self.span is None else list(self.span),
                "answer_type": self.answer_type.value, "label": self.label.value,
                "origin": self.origin.value}

    @classmethod
    def from_record(cls, rec):
        return cls(rec["qid"], rec["question"], tuple(rec["path"]),
                   None if rec.get("span") is None else tuple(rec["span"]),
                   rec.get("answer_type", "span"), rec.get("label", "gold"),
                   rec.get("origin", "supervised"))


def paragraph_tokens(text, max_tokens):
    return tokenize(text)[:max_tokens]


def locate_span(path_texts, answers, max_tokens=256, prefer_last=True):
    """First occurrence of any answer in the path's paragraph tokens.

    Paragraphs are searched last-first when ``prefer_last`` (the answer-bearing
    paragraph closes a gold path). Within a paragraph the earliest start wins;
    ties go to the earlier listed answer. Returns a span over the concatenated
    paragraph tokens or ``None``.
    """
    offsets = []
    total = 0
    for text in path_texts:
        offsets.append(total)
        total += len(paragraph_tokens(text, max_tokens))
    order = range(len(path_texts) - 1, -1, -1) if prefer_last else range(len(path_texts))
    for k in order:
        best = None
        truncated = " ".join(paragraph_tokens(path_texts[k], max_tokens))
        for a in answers:
            hit = find_answer(a, truncated)
            if hit is not None and (best is None or hit[0] < best[0]):
                best = hit
        if best is not None:
            return offsets[k] + best[0], offsets[k] + best[1]
    return None


def build_supervised_reader_example(tq, gold_path, corpus, max_tokens=256):
    path = tuple(p for p in gold_path if p != EOE)
    if tq.answer_type is not AnswerType.SPAN:
        return ReaderExample(tq.qid, tq.question, path, None, tq.answer_type)
    span = locate_span([corpus.text(p) for p in path], tq.answers, max_tokens)
    if span is None:
        log.warning("%s: answer not found in gold path tokens; example skipped", tq.qid)
        return None
    return ReaderExample(tq.qid, tq.question, path, span, tq.answer_type)


def build_extended_reader_example(tq, gold_path, graph, index, corpus, F=20, max_tokens=256):
    """A single-paragraph gold path plus one trailing answer-free paragraph, still gold.

    The extra paragraph is the first answer-free out-neighbor of the last gold
    paragraph, else the first answer-free TF-IDF paragraph outside the path.
    Targets (span or class) are those of the gold path; ``None`` when no
    paragraph qualifies.
    """
    path = tuple(p for p in gold_path if p != EOE)
    if len(path) != 1:
        return None
    members = set(path)

    def usable(pid):
        return pid not in members and not contains_answer(corpus.text(pid), tq.answers)

    extra = next((nb for nb in graph.neighbors(path[-1]) if usable(nb)), None)
    if extra is None:
        extra = next((pid for pid, _ in index.top_f(tq.question, F) if usable(pid)), None)
    if extra is None:
        return None
    base = build_supervised_reader_example(tq, gold_path, corpus, max_tokens)
    if base is None:
        return None
    # answer-free trailing paragraph: the last-first search still lands in the gold part
    return ReaderExample(tq.qid, tq.question, path + (extra,), base.span, tq.answer_type)


def build_distant_examples(tq, index, corpus, F=20, max_tokens=256):
    """At most one single-paragraph example from the TF-IDF ranking outside the gold set."""
    if tq.answer_type is not AnswerType.SPAN:
        return []
    gold = set(tq.gold_paras)
    for pid, _ in index.top_f(tq.question, F):
        if pid in gold:
            continue
        span = locate_span([corpus.text(pid)], tq.answers, max_tokens)
        if span is not None:
            return [ReaderExample(tq.qid, tq.question, (pid,), span, AnswerType.SPAN,
                                  PathLabel.GOLD, Origin.DISTANT)]
    return []


def build_reader_negatives(tq, gold_path, index, corpus, F=20, count=1):
    """Distorted paths: the answer-bearing (last) gold paragraph swapped for
    answer-free TF-IDF paragraphs. Paths containing any answer string are skipped."""
    path = [p for p in gold_path if p != EOE]
    gold = set(path)
    out = []
    for pid, _ in index.top_f(tq.question, F):
        if len(out) >= count:
            break
        if pid in gold:
            continue
        distorted = tuple(path[:-1] + [pid])
        if any(contains_answer(corpus.text(p), tq.answers) for p in distorted):
            continue
        out.append(ReaderExample(tq.qid, tq.question, distorted, None, tq.answer_type,
                                 PathLabel.DISTORTED, Origin.SUPERVISED))
    if not out:
        log.warning("%s: no answer-free TF-IDF paragraph for a distorted path", tq.qid)
    return out


def build_linked_reader_negatives(tq, gold_path, graph, corpus, count=3, removal=True):
    """Distorted multi-hop paths built from the graph.

    The answer-bearing (last) gold paragraph is swapped for answer-free
    out-neighbors of the paragraph before it (ascending id, at most ``count``);
    with ``removal`` the path without its last paragraph is added as well.
    Single-hop paths yield nothing.
    """
    path = [p for p in gold_path if p != EOE]
    if len(path) < 2:
        return []
    gold = set(path)

    def distorted(ids):
        if any(contains_answer(corpus.text(p), tq.answers) for p in ids):
            return None
        return ReaderExample(tq.qid, tq.question, tuple(ids), None, tq.answer_type,
                             PathLabel.DISTORTED, Origin.SUPERVISED)

    out = []
    for nb in graph.neighbors(path[-2]):
        if len(out) >= count:
            break
        if nb not in gold:
            ex = distorted(path[:-1] + [nb])
            if ex is not None:
                out.append(ex)
    if removal:
        ex = distorted(path[:-1])
        if ex is not None:
            out.append(ex)
    return out


def build_reader_examples(questions, corpus, index, F=20, negatives=1, distant=True,
                          max_tokens=256, graph=None, linked_negatives=0, removal=False,
                          extended=False):
    """Gold, distant and distorted reader examples for every question.

    ``linked_negatives``/``removal`` add graph-based distorted paths and
    ``extended`` adds gold paths with one trailing distractor (all need ``graph``).
    """
    if (linked_negatives or removal or extended) and graph is None:
        raise UsageError("graph-based reader negatives need the graph")
    out = []
    for tq in questions:
        gold = derive_gold_path(tq, corpus)
        ex = build_supervised_reader_example(tq, gold, corpus, max_tokens)
        if ex is not None:
            out.append(ex)
        if distant:
            out.extend(build_distant_examples(tq, index, corpus, F, max_tokens))
        if negatives:
            out.extend(build_reader_negatives(tq, gold, index, corpus, F, negatives))
        if linked_negatives or removal:
            out.extend(build_linked_reader_negatives(tq, gold, graph, corpus, linked_negatives,
                                                     removal))
        if extended:
            ext = build_extended_reader_example(tq, gold, graph, index, corpus, F, max_tokens)
            if ext is not None:
                out.append(ext)
    return out


def write_examples(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
