"""Hashed-feature question/paragraph encoder producing candidate vectors.

Forward pass for one input with hashed features ``f_1..f_n``::

    x   = mean_k E[f_k]                   (mean pool of embeddings)
    u   = tanh(P x + c)                   (projection)
    y   = (u - mean(u)) / sqrt(var(u) + eps)
    out = gain * y + shift                (standardization)

Feature ids past the hash range are reserved: ``bucket_count`` is the
separator, ``bucket_count + 1`` marks each paragraph token that also occurs in
the question, and ``bucket_count + 2`` marks each adjacent paragraph token pair
that also occurs adjacently in the question. The embedding table therefore has
``bucket_count + 3`` rows.
"""
from dataclasses import dataclass, fields
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix

from .errors import ConfigError, UsageError
from .text import content_tokens, hash_features, is_power_of_two, ngrams

STD_EPS = 1e-14
MAX_TOKENS = 256
N_RESERVED = 3


class EncoderMode(str, Enum):
    QUESTION_DEPENDENT = "question-dependent"
    QUESTION_INDEPENDENT = "question-independent"


@dataclass
class EncoderParams:
    embedding: np.ndarray  # (bucket_count + N_RESERVED, d)
    projection: np.ndarray  # (d, d)
    proj_bias: np.ndarray  # (d,)
    gain: np.ndarray  # (d,)
    shift: np.ndarray  # (d,)
    eoe: np.ndarray  # (d,) raw [EOE] vector, standardized on use
    mode: EncoderMode = EncoderMode.QUESTION_DEPENDENT
    max_tokens: int = MAX_TOKENS

    TENSORS = ("embedding", "projection", "proj_bias", "gain", "shift", "eoe")
    NO_DECAY = ("proj_bias", "gain", "shift")

    @property
    def d(self):
        return self.projection.shape[0]

    @property
    def bucket_count(self):
        return self.embedding.shape[0] - N_RESERVED

    @property
    def sep_id(self):
        return self.bucket_count

    @property
    def match_id(self):
        return self.bucket_count + 1

    @property
    def bigram_match_id(self):
        return self.bucket_count + 2

    def arrays(self):
        return {name: getattr(self, name) for name in self.TENSORS}

    def to_tensors(self, prefix="encoder."):
        out = {prefix + k: v for k, v in self.arrays().items()}
        out[prefix + "config.question_independent"] = np.array(
            float(self.mode is EncoderMode.QUESTION_INDEPENDENT))
        out[prefix + "config.max_tokens"] = np.array(float(self.max_tokens))
        return out

    @classmethod
    def from_tensors(cls, tensors, prefix="encoder."):
        arrays = {k: np.array(tensors[prefix + k], dtype=np.float64) for k in cls.TENSORS}
        qi = bool(tensors.get(prefix + "config.question_independent", np.array(0.0)))
        mode = EncoderMode.QUESTION_INDEPENDENT if qi else EncoderMode.QUESTION_DEPENDENT
        max_tokens = int(tensors.get(prefix + "config.max_tokens", np.array(MAX_TOKENS)))
        return cls(**arrays, mode=mode, max_tokens=max_tokens)

    def copy(self):
        return EncoderParams(**{k: v.copy() for k, v in self.arrays().items()},
                             mode=self.mode, max_tokens=self.max_tokens)

    def validate(self):
        if self.d < 2:
            raise ConfigError("encoder width d must be >= 2")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray) and not np.all(np.isfinite(v)):
                raise ConfigError(f"encoder parameter {f.name} is not finite")


def init_encoder_params(d=64, bucket_count=1 << 16, mode=EncoderMode.QUESTION_DEPENDENT,
                        seed=0, max_tokens=MAX_TOKENS):
    if d < 2:
        raise ConfigError("encoder width d must be >= 2")
    if not is_power_of_two(bucket_count):
        raise ConfigError(f"encoder bucket_count must be a power of two, got {bucket_count}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    params = EncoderParams(
        embedding=rng.uniform(-0.1, 0.1, size=(bucket_count + N_RESERVED, d)),
        projection=rng.uniform(-bound, bound, size=(d, d)),
        proj_bias=rng.uniform(-bound, bound, size=d),
        gain=np.ones(d),
        shift=np.zeros(d),
        eoe=rng.uniform(-0.1, 0.1, size=d),
        mode=EncoderMode(mode),
        max_tokens=max_tokens,
    )
    return params


@lru_cache(maxsize=1 << 18)
def _side_features(text, bucket_count, max_tokens):
    toks = content_tokens(text)[:max_tokens]
    return tuple(hash_features(ngrams(toks, 2), bucket_count)), frozenset(toks), tuple(toks)


@lru_cache(maxsize=1 << 10)
def _bigram_set(toks):
    return frozenset(zip(toks, toks[1:]))


def pair_features(params, question, paragraph):
    qf, qset, qtoks = _side_features(question, params.bucket_count, params.max_tokens)
    pf, _, ptoks = _side_features(paragraph, params.bucket_count, params.max_tokens)
    n_match = sum(1 for t in ptoks if t in qset)
    qpairs = _bigram_set(qtoks)
    n_pair = sum(1 for pair in zip(ptoks, ptoks[1:]) if pair in qpairs)
    return (qf + (params.sep_id,) + pf + (params.match_id,) * n_match
            + (params.bigram_match_id,) * n_pair)


def question_features(params, question):
    qf, _, _ = _side_features(question, params.bucket_count, params.max_tokens)
    return qf + (params.sep_id,)


def paragraph_features(params, paragraph):
    pf, _, _ = _side_features(paragraph, params.bucket_count, params.max_tokens)
    return (params.sep_id,) + pf


def standardize(u, eps=STD_EPS):
    mu = u.mean(axis=-1, keepdims=True)
    c = u - mu
    sigma = np.sqrt((c * c).mean(axis=-1, keepdims=True) + eps)
    return c / sigma, sigma


def standardize_backward(dy, y, sigma):
    """Gradient through ``y = (u - mean u) / sqrt(var u + eps)`` along the last axis."""
    return (dy - dy.mean(axis=-1, keepdims=True)
            - y * (dy * y).mean(axis=-1, keepdims=True)) / sigma


@dataclass
class EncoderCache:
    uniq: np.ndarray
    pool: csr_matrix
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    sigma: np.ndarray


def forward(params, feature_lists):
    """Encode a batch of feature-id sequences; returns ``(out, cache)``."""
    n = len(feature_lists)
    lengths = np.fromiter((len(f) for f in feature_lists), dtype=np.int64, count=n)
    flat = np.fromiter((i for f in feature_lists for i in f), dtype=np.int64,
                       count=int(lengths.sum()))
    uniq, local = np.unique(flat, return_inverse=True)
    rows = np.repeat(np.arange(n), lengths)
    weights = np.repeat(1.0 / lengths, lengths)
    pool = csr_matrix((weights, (rows, local.ravel())), shape=(n, len(uniq)))
    pool.sum_duplicates()
    x = pool @ params.embedding[uniq]
    u = np.tanh(x @ params.projection.T + params.proj_bias)
    y, sigma = standardize(u)
    out = params.gain * y + params.shift
    return out, EncoderCache(uniq, pool, x, u, y, sigma)


def backward(params, cache, dout):
    """Parameter gradients for upstream ``dout`` (same shape as the forward output).

    The embedding gradient is returned sparsely as ``(row_ids, row_grads)``
    under the key ``"embedding_rows"``.
    """
    if cache is None:
        raise UsageError("encoder backward called without a cached forward pass")
    dout = np.asarray(dout, dtype=np.float64).reshape(cache.y.shape)
    grads = {
        "gain": (dout * cache.y).sum(axis=0),
        "shift": dout.sum(axis=0),
    }
    du = standardize_backward(dout * params.gain, cache.y, cache.sigma)
    dz = du * (1.0 - cache.u * cache.u)
    grads["projection"] = dz.T @ cache.x
    grads["proj_bias"] = dz.sum(axis=0)
    dx = dz @ params.projection
    grads["embedding_rows"] = (cache.uniq, cache.pool.T @ dx)
    return grads


def eoe_forward(params):
    y, sigma = standardize(params.eoe[None, :])
    return (params.gain * y + params.shift)[0], (y, sigma)


def eoe_backward(params, cache, dout):
    if cache is None:
        raise UsageError("eoe backward called without a cached forward pass")
    y, sigma = cache
    dout = np.asarray(dout, dtype=np.float64)[None, :]
    return {
        "gain": (dout * y)[0],
        "shift": dout[0],
        "eoe": standardize_backward(dout * params.gain, y, sigma)[0],
    }


def eoe_vector(params):
    return eoe_forward(params)[0]


def _check_mode(params, expected):
    if params.mode is not expected:
        raise UsageError(f"operation requires a {expected.value} encoder, got {params.mode.value}")


def encode_pair(params, question, paragraph, return_cache=False):
    _check_mode(params, EncoderMode.QUESTION_DEPENDENT)
    out, cache = forward(params, [pair_features(params, question, paragraph)])
    return (out[0], cache) if return_cache else out[0]


def encode_paragraph(params, paragraph, return_cache=False):
    _check_mode(params, EncoderMode.QUESTION_INDEPENDENT)
    out, cache = forward(params, [paragraph_features(params, paragraph)])
    return (out[0], cache) if return_cache else out[0]


def encode_question(params, question, return_cache=False):
    _check_mode(params, EncoderMode.QUESTION_INDEPENDENT)
    out, cache = forward(params, [question_features(params, question)])
    return (out[0], cache) if return_cache else out[0]


def candidate_features(params, question, paragraph):
    """Features for a retrieval candidate under the encoder's mode."""
    if params.mode is EncoderMode.QUESTION_DEPENDENT:
        return pair_features(params, question, paragraph)
    return paragraph_features(params, paragraph)


def encoder_backward(params, cache, upstream_gradient):
    return backward(params, cache, upstream_gradient)


def add_grads(total, grads):
    """Accumulate encoder gradients; embedding rows are concatenated lazily."""
    for k, v in grads.items():
        if k == "embedding_rows":
            chunks = total.setdefault(k, [])
            if isinstance(v, list):
                chunks.extend(v)
            else:
                chunks.append(v)
        elif k in total:
            total[k] = total[k] + v
        else:
            total[k] = v
    return total


def dense_embedding_grad(params, row_chunks):
    g = np.zeros_like(params.embedding)
    for rows, vals in row_chunks:
        g[rows] += vals  # rows are unique within a chunk
    return g
