"""Paragraph corpus ingestion and the hyperlink paragraph graph."""
import json
import struct
from dataclasses import dataclass, field
from enum import Enum

from .errors import FormatError, IntegrityError, ParseError
from .text import normalize

GRAPH_MAGIC = b"HGRF1"


@dataclass(frozen=True)
class Paragraph:
    para_id: str
    article_title: str
    para_index: int
    text: str
    out_links: tuple = ()
    is_introductory: bool = False

    def to_record(self):
        return {
            "id": self.para_id,
            "title": self.article_title,
            "para_idx": self.para_index,
            "text": self.text,
            "links": list(self.out_links),
            "is_intro": self.is_introductory,
        }


class Corpus:
    """Immutable collection of paragraphs keyed by ``para_id``.

    Article titles are NFC-normalized; link targets are matched against
    them exactly (case-sensitive, no redirects). Links whose target article
    is missing are kept on the paragraph and listed in ``dangling_links``.
    """

    def __init__(self, paragraphs=()):
        self.paragraphs = {}
        for p in paragraphs:
            if p.para_id in self.paragraphs:
                raise IntegrityError(f"duplicate para_id {p.para_id!r}")
            if not p.text:
                raise IntegrityError(f"paragraph {p.para_id!r} has empty text")
            if p.para_index < 0:
                raise IntegrityError(f"paragraph {p.para_id!r} has negative para_idx")
            self.paragraphs[p.para_id] = p

        articles = {}
        for p in self.paragraphs.values():
            articles.setdefault(p.article_title, []).append(p)
        self.articles = {}
        for title, paras in articles.items():
            paras.sort(key=lambda p: p.para_index)
            indices = [p.para_index for p in paras]
            if indices != list(range(len(paras))):
                raise IntegrityError(
                    f"article {title!r}: para_idx values {indices} are not contiguous from 0")
            self.articles[title] = tuple(p.para_id for p in paras)

        self.dangling_links = {}
        for p in self.paragraphs.values():
            missing = [t for t in p.out_links if t not in self.articles]
            if missing:
                self.dangling_links[p.para_id] = missing

    def __len__(self):
        return len(self.paragraphs)

    def __contains__(self, para_id):
        return para_id in self.paragraphs

    def __getitem__(self, para_id):
        return self.paragraphs[para_id]

    def __iter__(self):
        return iter(self.paragraphs.values())

    def ids(self):
        return sorted(self.paragraphs)

    def text(self, para_id):
        return self.paragraphs[para_id].text

    def intro_of(self, title):
        """Introductory paragraph of an article, falling back to para_idx 0."""
        ids = self.articles[title]
        for pid in ids:
            if self.paragraphs[pid].is_introductory:
                return pid
        return ids[0]


def _paragraph_from_record(rec, lineno):
    try:
        title = normalize(rec["title"])
        return Paragraph(
            para_id=normalize(str(rec["id"])),
            article_title=title,
            para_index=int(rec["para_idx"]),
            text=rec["text"],
            out_links=tuple(normalize(t) for t in rec.get("links", [])),
            is_introductory=bool(rec.get("is_intro", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad corpus record: {exc!r}", line=lineno) from exc


def ingest_corpus(path):
    """Read a JSONL corpus file; blank lines are skipped."""
    paragraphs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(rec, dict):
                raise ParseError("record is not a JSON object", line=lineno)
            p = _paragraph_from_record(rec, lineno)
            if p.para_id in seen:
                raise IntegrityError(f"duplicate para_id {p.para_id!r} at line {lineno}")
            seen.add(p.para_id)
            paragraphs.append(p)
    return Corpus(paragraphs)


def write_corpus(corpus_or_paragraphs, path):
    paras = list(corpus_or_paragraphs)
    with open(path, "w", encoding="utf-8") as fh:
        for p in paras:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


class Granularity(str, Enum):
    INTRO_ONLY = "intro-only"
    ALL_PARAGRAPHS = "all-paragraphs"


@dataclass
class GraphReport:
    hyperlink_edges: int = 0
    within_document_edges: int = 0
    dangling_links: int = 0
    self_links: int = 0


@dataclass
class WikiGraph:
    adjacency: dict
    granularity: Granularity = None
    report: GraphReport = field(default_factory=GraphReport)

    def __contains__(self, para_id):
        return para_id in self.adjacency

    def __len__(self):
        return len(self.adjacency)

    @property
    def num_edges(self):
        return sum(len(v) for v in self.adjacency.values())

    def neighbors(self, para_id):
        try:
            return self.adjacency[para_id]
        except KeyError:
            raise KeyError(f"unknown paragraph id {para_id!r}") from None

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(serialize_graph(self))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return deserialize_graph(fh.read())


def neighbors(graph, para_id):
    return graph.neighbors(para_id)


def build_graph(corpus, granularity=Granularity.ALL_PARAGRAPHS):
    """Directed hyperlink edges plus symmetric within-article edges.

    A link from paragraph ``p`` to article ``Y`` adds ``p -> q`` for every
    paragraph ``q`` of ``Y`` (or only ``Y``'s intro under ``intro-only``).
    Dangling links and links back into ``p``'s own article that would be
    self-edges are dropped and counted in ``graph.report``.
    """
    granularity = Granularity(granularity)
    report = GraphReport()
    edges = {pid: set() for pid in corpus.paragraphs}

    for ids in corpus.articles.values():
        for u in ids:
            for v in ids:
                if u != v:
                    edges[u].add(v)
                    report.within_document_edges += 1

    for p in corpus:
        for title in p.out_links:
            if title not in corpus.articles:
                report.dangling_links += 1
                continue
            if granularity is Granularity.INTRO_ONLY:
                targets = (corpus.intro_of(title),)
            else:
                targets = corpus.articles[title]
            for q in targets:
                if q == p.para_id:
                    report.self_links += 1
                elif q not in edges[p.para_id]:
                    edges[p.para_id].add(q)
                    report.hyperlink_edges += 1

    adjacency = {pid: sorted(edges[pid]) for pid in sorted(edges)}
    return WikiGraph(adjacency=adjacency, granularity=granularity, report=report)


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def serialize_graph(graph):
    parts = [GRAPH_MAGIC, struct.pack("<Q", len(graph.adjacency))]
    for pid in sorted(graph.adjacency):
        nbrs = graph.adjacency[pid]
        parts.append(_pack_str(pid))
        parts.append(struct.pack("<I", len(nbrs)))
        parts.extend(_pack_str(n) for n in nbrs)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, what):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what} file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<I")
        return bytes(self.take(n)).decode("utf-8")

    def at_end(self):
        return self.pos == len(self.buf)


def deserialize_graph(buf):
    r = _Reader(buf, "graph")
    if bytes(r.take(len(GRAPH_MAGIC))) != GRAPH_MAGIC:
        raise FormatError("not a HGRF1 graph file")
    (count,) = r.unpack("<Q")
    adjacency = {}
    for _ in range(count):
        pid = r.string()
        (k,) = r.unpack("<I")
        adjacency[pid] = [r.string() for _ in range(k)]
    if not r.at_end():
        raise FormatError("trailing bytes after graph payload")
    return WikiGraph(adjacency=adjacency)
