"""Path reader: answerability re-ranking, span extraction and answer typing.

Input tokens are ``question ⊕ SEP ⊕ p_1 ⊕ SEP ⊕ p_2 ...``. Token ``i`` is
represented from the summed embeddings of its hashed features ``e_i`` and the
mean question-word embedding ``s_q``::

    r_i = token_gain * standardize(tanh(e_i + Q s_q + c)) + token_shift
    u_E = pool_gain * standardize(mean_i r_i) + pool_shift

    P(E | q)   = sigmoid(w_path . u_E)
    P^start_i  = softmax over paragraph tokens of (w_start . r_i)
    P^end_j    = softmax over paragraph tokens of (w_end . r_j)
    class      = softmax(H u_E) over (span, yes, no), when enabled

Paragraph-token features: the word, the two previous words, the next word,
and an exact-match marker when the word occurs in the question.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_tensors, merge_into, save_tensors, subset
from .encoder import standardize, standardize_backward
from .errors import ConfigError, DivergenceError, UsageError
from .optim import AdamW, RowGrad, linear_warmup_schedule, sum_row_chunks
from .retriever import EOE, PROB_CLIP
from .supervision import AnswerType, PathLabel
from .text import _hash, is_power_of_two, normalize, tokenize, tokenize_with_offsets

log = logging.getLogger(__name__)

CLASSES = (AnswerType.SPAN, AnswerType.YES, AnswerType.NO)
MAX_SPAN_LEN = 30
MAX_TOKENS = 256
N_RESERVED = 2


@dataclass
class ReaderParams:
    embedding: np.ndarray  # (bucket_count + 2, d)
    question_proj: np.ndarray  # (d, d)
    token_bias: np.ndarray  # (d,)
    token_gain: np.ndarray
    token_shift: np.ndarray
    pool_gain: np.ndarray
    pool_shift: np.ndarray
    start: np.ndarray  # (d,)
    end: np.ndarray  # (d,)
    path: np.ndarray  # (d,)
    answer_class: np.ndarray  # (3, d)
    use_answer_class: bool = False
    max_tokens: int = MAX_TOKENS

    TENSORS = ("embedding", "question_proj", "token_bias", "token_gain", "token_shift",
               "pool_gain", "pool_shift", "start", "end", "path", "answer_class")
    NO_DECAY = ("token_bias", "token_gain", "token_shift", "pool_gain", "pool_shift")

    @property
    def d(self):
        return self.start.shape[0]

    @property
    def bucket_count(self):
        return self.embedding.shape[0] - N_RESERVED

    @property
    def sep_id(self):
        return self.bucket_count

    @property
    def match_id(self):
        return self.bucket_count + 1

    def arrays(self):
        return {k: getattr(self, k) for k in self.TENSORS}

    def copy(self):
        return ReaderParams(**{k: v.copy() for k, v in self.arrays().items()},
                            use_answer_class=self.use_answer_class, max_tokens=self.max_tokens)

    def to_tensors(self, prefix="reader."):
        out = {prefix + k: v for k, v in self.arrays().items()}
        out[prefix + "config.answer_classes"] = np.array(float(self.use_answer_class))
        out[prefix + "config.max_tokens"] = np.array(float(self.max_tokens))
        return out

    @classmethod
    def from_tensors(cls, tensors, prefix="reader."):
        arrays = {k: np.array(tensors[prefix + k], dtype=np.float64) for k in cls.TENSORS}
        flag = bool(tensors.get(prefix + "config.answer_classes", np.array(0.0)))
        max_tokens = int(tensors.get(prefix + "config.max_tokens", np.array(MAX_TOKENS)))
        return cls(**arrays, use_answer_class=flag, max_tokens=max_tokens).validate()

    def validate(self):
        if self.d < 2:
            raise ConfigError("reader width must be >= 2")
        for k, v in self.arrays().items():
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"reader parameter {k} is not finite")
        return self


def init_reader_params(d=64, bucket_count=1 << 16, use_answer_class=False, seed=0,
                       max_tokens=MAX_TOKENS):
    if d < 2:
        raise ConfigError("reader width must be >= 2")
    if not is_power_of_two(bucket_count):
        raise ConfigError(f"reader bucket_count must be a power of two, got {bucket_count}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    return ReaderParams(
        embedding=rng.uniform(-0.1, 0.1, size=(bucket_count + N_RESERVED, d)),
        question_proj=rng.uniform(-bound, bound, size=(d, d)),
        token_bias=np.zeros(d),
        token_gain=np.ones(d),
        token_shift=np.zeros(d),
        pool_gain=np.ones(d),
        pool_shift=np.zeros(d),
        start=rng.uniform(-bound, bound, size=d),
        end=rng.uniform(-bound, bound, size=d),
        path=rng.uniform(-bound, bound, size=d),
        answer_class=rng.uniform(-bound, bound, size=(3, d)),
        use_answer_class=use_answer_class,
        max_tokens=max_tokens,
    )


# --------------------------------------------------------------------------
# featurization


@lru_cache(maxsize=1 << 20)
def _feat(kind, token, bucket_count):
    return _hash(kind + ":" + token) & (bucket_count - 1)


@lru_cache(maxsize=1 << 16)
def _paragraph_token_features(text, bucket_count, max_tokens):
    toks = tokenize(text)[:max_tokens]
    padded = ["<s>", "<s>"] + toks + ["</s>"]
    feats = []
    for k, tok in enumerate(toks):
        feats.append((_feat("w", tok, bucket_count),
                      _feat("l1", padded[k + 1], bucket_count),
                      _feat("l2", padded[k], bucket_count),
                      _feat("r1", padded[k + 3], bucket_count)))
    return tuple(toks), tuple(feats)


@dataclass
class PathInput:
    """Featurized ``(question, path)`` pair."""

    features: list  # per token, tuple of feature ids
    question_words: tuple  # feature ids averaged into the question summary
    para_positions: np.ndarray  # token positions of paragraph tokens
    segments: list  # (start, end) in paragraph-token coordinates per paragraph
    texts: list = field(default_factory=list)


def featurize(params, question, paragraphs):
    """``paragraphs`` are texts in path order."""
    if not paragraphs:
        raise UsageError("reader input needs a non-empty path")
    B = params.bucket_count
    qtoks = tokenize(question)[:params.max_tokens]
    qset = frozenset(qtoks)
    qwords = tuple(_feat("w", t, B) for t in qtoks)
    features = [(w,) for w in qwords]
    positions = []
    segments = []
    n_para = 0
    for text in paragraphs:
        features.append((params.sep_id,))
        toks, feats = _paragraph_token_features(text, B, params.max_tokens)
        start = n_para
        for tok, f in zip(toks, feats):
            positions.append(len(features))
            features.append(f + (params.match_id,) if tok in qset else f)
        n_para += len(toks)
        segments.append((start, n_para))
    if n_para == 0:
        raise UsageError("reader input has no paragraph tokens")
    return PathInput(features, qwords, np.array(positions, dtype=np.int64), segments,
                     list(paragraphs))


@dataclass
class ReaderCache:
    inp: PathInput
    uniq: np.ndarray
    pool: csr_matrix
    qpool: csr_matrix
    s_q: np.ndarray
    a: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    r: np.ndarray
    y2: np.ndarray
    sigma2: np.ndarray
    u: np.ndarray


def _log_softmax(x):
    m = x.max()
    z = x - m
    return z - math.log(np.exp(z).sum())


def forward(params, inp):
    """Token representations ``r`` and pooled ``u_E`` with the backward cache."""
    n = len(inp.features)
    lengths = np.fromiter((len(f) for f in inp.features), dtype=np.int64, count=n)
    flat = np.fromiter((i for f in inp.features for i in f), dtype=np.int64,
                       count=int(lengths.sum()))
    qflat = np.array(inp.question_words, dtype=np.int64)
    uniq, local = np.unique(np.concatenate([flat, qflat]), return_inverse=True)
    local = local.ravel()
    rows = np.repeat(np.arange(n), lengths)
    pool = csr_matrix((np.ones(len(flat)), (rows, local[:len(flat)])), shape=(n, len(uniq)))
    pool.sum_duplicates()
    nq = len(qflat)
    if nq:
        qpool = csr_matrix((np.full(nq, 1.0 / nq), (np.zeros(nq, dtype=np.int64),
                                                    local[len(flat):])), shape=(1, len(uniq)))
        qpool.sum_duplicates()
    else:
        qpool = csr_matrix((1, len(uniq)))
    emb = params.embedding[uniq]
    e = pool @ emb
    s_q = (qpool @ emb)[0]
    a = np.tanh(e + params.question_proj @ s_q + params.token_bias)
    y, sigma = standardize(a)
    r = params.token_gain * y + params.token_shift
    y2, sigma2 = standardize(r.mean(axis=0, keepdims=True))
    u = (params.pool_gain * y2 + params.pool_shift)[0]
    return r, u, ReaderCache(inp, uniq, pool, qpool, s_q, a, y, sigma, r, y2, sigma2, u)


def encode_path(params, question, paragraphs):
    """``(token representations, u_E)`` for the question and paragraph texts."""
    r, u, _ = forward(params, featurize(params, question, paragraphs))
    return r, u


def path_prob_from_u(params, u):
    return float(expit(float(params.path @ u)))


def rerank_prob(params, question, paragraphs):
    _, u = encode_path(params, question, paragraphs)
    return path_prob_from_u(params, u)


def span_distributions(params, cache):
    rp = cache.r[cache.inp.para_positions]
    ls = rp @ params.start
    le = rp @ params.end
    return np.exp(_log_softmax(ls)), np.exp(_log_softmax(le))


def best_span(p_start, p_end, max_span_len=MAX_SPAN_LEN, segments=None):
    """Argmax of ``p_start[i] * p_end[j]`` over ``i <= j < i + max_span_len``.

    ``segments`` (``[(start, end)]`` half-open) confines spans to one
    paragraph. Ties go to the smallest ``i``, then the smallest ``j``.
    Returns 0-based ``(i, j, score)``.
    """
    p_start = np.asarray(p_start, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    n = len(p_start)
    if n == 0 or len(p_end) != n:
        raise UsageError("span distributions must be non-empty and aligned")
    if segments is None:
        segments = [(0, n)]
    best = (-1.0, 0, 0)
    for lo, hi in segments:
        for i in range(lo, hi):
            stop = min(hi, i + max_span_len)
            window = p_end[i:stop]
            k = int(np.argmax(window))
            score = float(p_start[i] * window[k])
            if score > best[0]:
                best = (score, i, i + k)
    return best[1], best[2], best[0]


def extract_span(params, question, paragraphs, max_span_len=MAX_SPAN_LEN):
    """``(i, j, S_read)`` over paragraph tokens (0-based, inclusive)."""
    _, _, cache = forward(params, featurize(params, question, paragraphs))
    ps, pe = span_distributions(params, cache)
    return best_span(ps, pe, max_span_len, cache.inp.segments)


def class_probs(params, u):
    return np.exp(_log_softmax(params.answer_class @ u))


def classify_answer_type(params, question, paragraphs):
    if not params.use_answer_class:
        return AnswerType.SPAN
    _, u = encode_path(params, question, paragraphs)
    return CLASSES[int(np.argmax(params.answer_class @ u))]


def decode_span(paragraphs, segments, i, j, max_tokens=MAX_TOKENS):
    """Surface text of paragraph-token span ``(i, j)`` from the original texts."""
    for text, (lo, hi) in zip(paragraphs, segments):
        if lo <= i < hi:
            if j >= hi:
                raise UsageError("span crosses a paragraph boundary")
            toks = tokenize_with_offsets(text)[:max_tokens]
            return normalize(text)[toks[i - lo][1]:toks[j - lo][2]]
    raise UsageError(f"span start {i} outside paragraph tokens")


# --------------------------------------------------------------------------
# answering


@dataclass
class AnswerPrediction:
    qid: str = None
    answer: str = ""
    answer_type: AnswerType = AnswerType.SPAN
    path: tuple = ()
    span: tuple = None
    p_start: np.ndarray = None
    p_end: np.ndarray = None
    s_read: float = 0.0
    p_path: float = 0.0
    s_retr: float = None
    path_probs: list = field(default_factory=list)
    no_answer: bool = False

    def to_record(self):
        return {"qid": self.qid, "answer": self.answer, "answer_type": self.answer_type.value,
                "path": list(self.path), "p_path": self.p_path, "s_read": self.s_read,
                "s_retr": self.s_retr, "no_answer": self.no_answer}


def _as_path(p):
    if hasattr(p, "paragraphs"):
        return tuple(x for x in p.paragraphs if x != EOE), float(p.log_score)
    ids = tuple(x for x in p if x != EOE)
    return ids, 0.0


def answer(params, question, paths, texts, rerank=True, max_span_len=MAX_SPAN_LEN, qid=None):
    """Choose ``E_best`` by ``P(E|q)`` and read the answer from it.

    ``paths`` are :class:`ReasoningPath` objects (best retriever path first) or
    id tuples. With ``rerank=False`` the first path is used. Ties on
    ``P(E|q)`` go to the higher retriever score, then the smaller id tuple.
    """
    cands = [_as_path(p) for p in paths]
    cands = [c for c in cands if c[0]]
    if not cands:
        return AnswerPrediction(qid=qid, no_answer=True)
    scored = []
    for ids, s_retr in cands:
        _, u, cache = forward(params, featurize(params, question, [texts[i] for i in ids]))
        scored.append((path_prob_from_u(params, u), s_retr, ids, u, cache))
    if rerank:
        best = min(scored, key=lambda s: (-s[0], -s[1], s[2]))
    else:
        best = scored[0]
    p_path, s_retr, ids, u, cache = best
    pred = AnswerPrediction(qid=qid, path=ids, p_path=p_path, s_retr=s_retr,
                            path_probs=[(s[2], s[0]) for s in scored])
    kind = AnswerType.SPAN
    if params.use_answer_class:
        cp = class_probs(params, u)
        kind = CLASSES[int(np.argmax(cp))]
        if kind is not AnswerType.SPAN:
            pred.answer_type = kind
            pred.answer = kind.value
            pred.s_read = float(cp.max())
            return pred
    ps, pe = span_distributions(params, cache)
    i, j, s_read = best_span(ps, pe, max_span_len, cache.inp.segments)
    pred.p_start, pred.p_end = ps, pe
    pred.span = (i, j)
    pred.s_read = s_read
    pred.answer = decode_span(cache.inp.texts, cache.inp.segments, i, j, params.max_tokens)
    return pred


# --------------------------------------------------------------------------
# loss and training


def _clipped_sigmoid_loss(logit, target):
    p = float(expit(logit))
    pc = min(max(p if target else 1.0 - p, PROB_CLIP), 1.0)
    clipped = p < PROB_CLIP or p > 1.0 - PROB_CLIP
    dlogit = 0.0 if clipped else (p - 1.0 if target else p)
    return -math.log(pc), dlogit, p


def reader_loss(params, example, texts, with_grads=True):
    """Span + answerability cross-entropy for one :class:`ReaderExample`.

    Distorted paths contribute only ``-log(1 - P(E|q))``. Returns
    ``(loss, grads)``; the embedding gradient is sparse under ``"embedding_rows"``.
    """
    inp = featurize(params, example.question, [texts[p] for p in example.path])
    r, u, cache = forward(params, inp)
    gold = example.label is PathLabel.GOLD
    loss, dlogit, _ = _clipped_sigmoid_loss(float(params.path @ u), gold)

    span_grads = None
    if gold and example.span is not None and example.answer_type is AnswerType.SPAN:
        ys, ye = example.span
        n_para = len(inp.para_positions)
        if not (0 <= ys <= ye < n_para):
            raise UsageError(f"{example.qid}: span {example.span} outside {n_para} tokens")
        rp = r[inp.para_positions]
        lss = _log_softmax(rp @ params.start)
        lse = _log_softmax(rp @ params.end)
        loss -= float(lss[ys] + lse[ye])
        ds = np.exp(lss)
        ds[ys] -= 1.0
        de = np.exp(lse)
        de[ye] -= 1.0
        span_grads = (rp, ds, de)

    cls_grad = None
    if gold and params.use_answer_class:
        lsc = _log_softmax(params.answer_class @ u)
        k = CLASSES.index(example.answer_type)
        loss -= float(lsc[k])
        dc = np.exp(lsc)
        dc[k] -= 1.0
        cls_grad = dc

    if not math.isfinite(loss):
        raise DivergenceError(f"{example.qid}: reader loss is not finite")
    if not with_grads:
        return loss, None

    g = {k: np.zeros_like(v) for k, v in params.arrays().items() if k != "embedding"}
    g["path"] = dlogit * u
    du = dlogit * params.path
    if cls_grad is not None:
        g["answer_class"] = np.outer(cls_grad, u)
        du = du + params.answer_class.T @ cls_grad
    g["pool_gain"] = du * cache.y2[0]
    g["pool_shift"] = du.copy()
    dm = standardize_backward((du * params.pool_gain)[None, :], cache.y2, cache.sigma2)[0]
    dr = np.broadcast_to(dm / r.shape[0], r.shape).copy()
    if span_grads is not None:
        rp, ds, de = span_grads
        g["start"] = rp.T @ ds
        g["end"] = rp.T @ de
        dr[inp.para_positions] += np.outer(ds, params.start) + np.outer(de, params.end)
    g["token_gain"] = (dr * cache.y).sum(axis=0)
    g["token_shift"] = dr.sum(axis=0)
    da = standardize_backward(dr * params.token_gain, cache.y, cache.sigma)
    dz = da * (1.0 - cache.a * cache.a)
    dz_sum = dz.sum(axis=0)
    g["token_bias"] = dz_sum
    g["question_proj"] = np.outer(dz_sum, cache.s_q)
    ds_q = params.question_proj.T @ dz_sum
    rows_grad = cache.pool.T @ dz + (cache.qpool.T @ ds_q[None, :])
    g["embedding_rows"] = (cache.uniq, np.asarray(rows_grad))
    return loss, g


@dataclass
class ReaderTrainConfig:
    lr: float = 1e-2
    epochs: int = 2
    batch_size: int = 120
    weight_decay: float = 0.01
    warmup: float = 0.1
    seed: int = 0
    lazy_rows: bool = False


def train_reader(examples, params, texts, config=ReaderTrainConfig(), log_fn=None):
    """AdamW over mini-batches of reader examples; updates ``params`` in place.

    Returns per-epoch mean losses.
    """
    if not examples:
        raise UsageError("no reader training examples")
    flat = {k: v for k, v in params.arrays().items()}
    opt = AdamW(flat, lr=config.lr, weight_decay=config.weight_decay, no_decay=params.NO_DECAY,
                lazy_rows=config.lazy_rows)
    rng = np.random.default_rng(config.seed)
    total = math.ceil(len(examples) / config.batch_size) * config.epochs
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for lo in range(0, len(examples), config.batch_size):
            batch = [examples[i] for i in order[lo:lo + config.batch_size]]
            grads = {}
            chunks = []
            batch_loss = 0.0
            for ex in batch:
                loss, gr = reader_loss(params, ex, texts)
                batch_loss += loss
                chunks.append(gr.pop("embedding_rows"))
                for k, v in gr.items():
                    grads[k] = grads[k] + v if k in grads else v
            scale = 1.0 / len(batch)
            rows, vals = sum_row_chunks(chunks, params.embedding.shape[1])
            grads = {k: v * scale for k, v in grads.items()}
            grads["embedding"] = RowGrad(rows, vals * scale)
            opt.step(grads, linear_warmup_schedule(step, total, config.warmup))
            step += 1
            epoch_loss += batch_loss
        history.append(epoch_loss / len(examples))
        if log_fn is not None:
            log_fn(f"reader epoch {epoch + 1}/{config.epochs} loss {history[-1]:.4f}")
    return history


# --------------------------------------------------------------------------
# estimator


class PathReader(BaseEstimator):
    """Estimator facade: ``fit(examples, texts)``, ``predict(questions, paths, texts)``."""

    def __init__(self, d=64, bucket_count=1 << 16, answer_classes=False, lr=1e-2, epochs=2,
                 batch_size=120, weight_decay=0.01, warmup=0.1, max_span_len=MAX_SPAN_LEN,
                 rerank=True, seed=0, max_tokens=MAX_TOKENS):
        self.d = d
        self.bucket_count = bucket_count
        self.answer_classes = answer_classes
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.max_span_len = max_span_len
        self.rerank = rerank
        self.seed = seed
        self.max_tokens = max_tokens

    def fit(self, examples, texts, log_fn=None):
        examples = list(examples)
        self.params_ = init_reader_params(self.d, self.bucket_count, self.answer_classes,
                                          self.seed, self.max_tokens)
        cfg = ReaderTrainConfig(self.lr, self.epochs, self.batch_size, self.weight_decay,
                                self.warmup, self.seed)
        self.loss_history_ = train_reader(examples, self.params_, texts, cfg, log_fn)
        return self

    def predict_one(self, question, paths, texts, qid=None, rerank=None):
        check_is_fitted(self, "params_")
        rr = self.rerank if rerank is None else rerank
        return answer(self.params_, question, paths, texts, rr, self.max_span_len, qid)

    def predict(self, questions, paths, texts, rerank=None):
        return [self.predict_one(q, p, texts, rerank=rerank) for q, p in zip(questions, paths)]

    def path_prob(self, question, path_ids, texts):
        check_is_fitted(self, "params_")
        return rerank_prob(self.params_, question, [texts[p] for p in path_ids])

    def to_tensors(self):
        check_is_fitted(self, "params_")
        return self.params_.to_tensors()

    def save(self, path, merge=False):
        if merge:
            merge_into(path, self.to_tensors())
        else:
            save_tensors(self.to_tensors(), path)

    @classmethod
    def from_tensors(cls, tensors, **kwargs):
        params = ReaderParams.from_tensors(tensors)
        obj = cls(d=params.d, bucket_count=params.bucket_count,
                  answer_classes=params.use_answer_class, max_tokens=params.max_tokens, **kwargs)
        obj.params_ = params
        return obj

    @classmethod
    def load(cls, path, **kwargs):
        tensors = load_tensors(path)
        if not subset(tensors, "reader."):
            raise UsageError(f"{path} has no reader tensors")
        return cls.from_tensors(tensors, **kwargs)
