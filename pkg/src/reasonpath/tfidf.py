"""Bigram-hashed TF-IDF retrieval.

weight(f, d) = log(1 + tf(f, d)) * idf(f)
idf(f)       = max(0, log((N - N_f + 0.5) / (N_f + 0.5)))

Scalar weights are computed with :mod:`math` rather than numpy ufuncs so
that they agree bit-for-bit with a plain-Python recomputation.
"""
import math
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus, Paragraph, _Reader
from .errors import ConfigError, FormatError
from .text import content_tokens, hash_features, is_power_of_two, ngrams

INDEX_MAGIC = b"TFIX1"
DEFAULT_BUCKETS = 1 << 24


def idf(num_docs, doc_freq):
    return max(0.0, math.log((num_docs - doc_freq + 0.5) / (doc_freq + 0.5)))


def text_features(text, bucket_count, n=2):
    """Sorted ``(feature, tf)`` pairs for ``text``."""
    grams = ngrams(content_tokens(text), n)
    return sorted(Counter(hash_features(grams, bucket_count)).items())


@dataclass
class SparseIndex:
    bucket_count: int
    ngrams: int
    doc_ids: list
    df_features: np.ndarray  # uint32, ascending
    df_counts: np.ndarray  # uint32
    indptr: np.ndarray  # uint64, len N + 1
    indices: np.ndarray  # uint32, ascending within a row
    data: np.ndarray  # float64

    def __post_init__(self):
        self._df = dict(zip(self.df_features.tolist(), self.df_counts.tolist()))
        self._postings = None
        self._row = {pid: i for i, pid in enumerate(self.doc_ids)}

    @property
    def num_docs(self):
        return len(self.doc_ids)

    @property
    def doc_freq(self):
        return self._df

    def idf(self, feature):
        return idf(self.num_docs, self._df.get(feature, 0))

    def doc_vector(self, para_id):
        i = self._row[para_id]
        lo, hi = int(self.indptr[i]), int(self.indptr[i + 1])
        return dict(zip(self.indices[lo:hi].tolist(), self.data[lo:hi].tolist()))

    def query_vector(self, text):
        """``[(feature, weight)]`` ascending by feature; zero weights dropped."""
        out = []
        for f, tf in text_features(text, self.bucket_count, self.ngrams):
            w = math.log1p(tf) * self.idf(f)
            if w > 0.0:
                out.append((f, w))
        return out

    def _build_postings(self):
        rows = np.repeat(np.arange(self.num_docs), np.diff(self.indptr).astype(np.int64))
        order = np.lexsort((rows, self.indices))
        feats = self.indices[order]
        uniq, start = np.unique(feats, return_index=True)
        bounds = np.append(start, len(feats))
        self._postings = {
            int(f): (rows[order[bounds[k]:bounds[k + 1]]], self.data[order[bounds[k]:bounds[k + 1]]])
            for k, f in enumerate(uniq)
        }

    def scores(self, text):
        """Dense score vector over documents (row order of ``doc_ids``)."""
        if self._postings is None:
            self._build_postings()
        scores = np.zeros(self.num_docs)
        for f, w in self.query_vector(text):
            hit = self._postings.get(f)
            if hit is not None:
                rows, vals = hit
                scores[rows] += w * vals
        return scores

    def top_f(self, query_text, F):
        if F < 1:
            raise ConfigError("F must be >= 1")
        scores = self.scores(query_text)
        hits = np.flatnonzero(scores > 0.0)
        ranked = sorted(((-scores[i], self.doc_ids[i]) for i in hits))
        return [(pid, -neg) for neg, pid in ranked[:F]]

    def to_bytes(self):
        parts = [
            INDEX_MAGIC,
            struct.pack("<QQQ", self.bucket_count, self.ngrams, self.num_docs),
        ]
        for pid in self.doc_ids:
            b = pid.encode("utf-8")
            parts.append(struct.pack("<I", len(b)) + b)
        parts.append(struct.pack("<Q", len(self.df_features)))
        parts.append(self.df_features.astype("<u4").tobytes())
        parts.append(self.df_counts.astype("<u4").tobytes())
        parts.append(struct.pack("<Q", len(self.indices)))
        parts.append(self.indptr.astype("<u8").tobytes())
        parts.append(self.indices.astype("<u4").tobytes())
        parts.append(self.data.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf):
        r = _Reader(buf, "index")
        if bytes(r.take(len(INDEX_MAGIC))) != INDEX_MAGIC:
            raise FormatError("not a TFIX1 index file")
        bucket_count, n, num_docs = r.unpack("<QQQ")
        doc_ids = [r.string() for _ in range(num_docs)]
        (ndf,) = r.unpack("<Q")
        df_features = np.frombuffer(r.take(4 * ndf), dtype="<u4").astype(np.uint32)
        df_counts = np.frombuffer(r.take(4 * ndf), dtype="<u4").astype(np.uint32)
        (nnz,) = r.unpack("<Q")
        indptr = np.frombuffer(r.take(8 * (num_docs + 1)), dtype="<u8").astype(np.uint64)
        indices = np.frombuffer(r.take(4 * nnz), dtype="<u4").astype(np.uint32)
        data = np.frombuffer(r.take(8 * nnz), dtype="<f8").astype(np.float64)
        if not r.at_end():
            raise FormatError("trailing bytes after index payload")
        return cls(int(bucket_count), int(n), doc_ids, df_features, df_counts,
                   indptr, indices, data)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _build_from_texts(ids_and_texts, bucket_count, n):
    if not is_power_of_two(bucket_count):
        raise ConfigError(f"bucket_count must be a power of two, got {bucket_count}")
    if n < 1:
        raise ConfigError("ngrams must be >= 1")
    items = sorted(ids_and_texts)
    doc_ids = [pid for pid, _ in items]
    per_doc = [text_features(text, bucket_count, n) for _, text in items]
    df = Counter(f for feats in per_doc for f, _ in feats)
    num_docs = len(items)
    idfs = {f: idf(num_docs, c) for f, c in df.items()}

    indptr = [0]
    indices, data = [], []
    for feats in per_doc:
        for f, tf in feats:
            indices.append(f)
            data.append(math.log1p(tf) * idfs[f])
        indptr.append(len(indices))

    df_features = np.array(sorted(df), dtype=np.uint32)
    df_counts = np.array([df[f] for f in sorted(df)], dtype=np.uint32)
    return SparseIndex(bucket_count, n, doc_ids, df_features, df_counts,
                       np.array(indptr, dtype=np.uint64),
                       np.array(indices, dtype=np.uint32),
                       np.array(data, dtype=np.float64))


def build_index(corpus, bucket_count=DEFAULT_BUCKETS, ngrams=2):
    """Paragraph-level index over ``corpus`` (documents ordered by para_id)."""
    return _build_from_texts(((p.para_id, p.text) for p in corpus), bucket_count, ngrams)


def build_article_index(corpus, bucket_count=DEFAULT_BUCKETS, ngrams=2):
    """Article-level index; each document is the title plus all its paragraphs."""
    docs = []
    for title, ids in corpus.articles.items():
        docs.append((title, "\n".join([title] + [corpus.text(pid) for pid in ids])))
    return _build_from_texts(docs, bucket_count, ngrams)


def top_f(index, query_text, F):
    return index.top_f(query_text, F)


def two_stage_top_f(article_index, corpus, query, F, n_articles=50):
    """Top articles first, then a paragraph-level TF-IDF pass over their paragraphs.

    The paragraph pass builds a local index over the pooled paragraphs.
    Ordering: paragraph score desc, then article rank, then para_id.
    Zero-score paragraphs of retrieved articles stay in the pool.
    """
    if F < 1:
        raise ConfigError("F must be >= 1")
    articles = [title for title, _ in article_index.top_f(query, n_articles)]
    if not articles:
        return []
    rank_of = {}
    pool = []
    for rank, title in enumerate(articles):
        for pid in corpus.articles[title]:
            rank_of[pid] = rank
            pool.append(corpus[pid])
    local = build_index(Corpus(pool), article_index.bucket_count, article_index.ngrams)
    scores = dict(zip(local.doc_ids, local.scores(query).tolist()))
    ranked = sorted(pool, key=lambda p: (-scores[p.para_id], rank_of[p.para_id], p.para_id))
    return [(p.para_id, scores[p.para_id]) for p in ranked[:F]]


class TfidfRetriever(BaseEstimator):
    """Estimator wrapper: ``fit(corpus)`` builds the index, ``transform`` vectorizes queries."""

    def __init__(self, bucket_count=DEFAULT_BUCKETS, ngrams=2, two_stage=False, n_articles=50):
        self.bucket_count = bucket_count
        self.ngrams = ngrams
        self.two_stage = two_stage
        self.n_articles = n_articles

    def fit(self, corpus, y=None):
        if not isinstance(corpus, Corpus):
            corpus = Corpus(p if isinstance(p, Paragraph) else Paragraph(**p) for p in corpus)
        self.corpus_ = corpus
        self.index_ = build_index(corpus, self.bucket_count, self.ngrams)
        if self.two_stage:
            self.article_index_ = build_article_index(corpus, self.bucket_count, self.ngrams)
        return self

    def transform(self, texts):
        from scipy.sparse import csr_matrix

        check_is_fitted(self, "index_")
        rows, cols, vals = [], [], []
        for i, text in enumerate(texts):
            for f, w in self.index_.query_vector(text):
                rows.append(i)
                cols.append(f)
                vals.append(w)
        return csr_matrix((vals, (rows, cols)), shape=(len(texts), self.bucket_count))

    def retrieve(self, query, F):
        check_is_fitted(self, "index_")
        if self.two_stage:
            return two_stage_top_f(self.article_index_, self.corpus_, query, F, self.n_articles)
        return self.index_.top_f(query, F)
