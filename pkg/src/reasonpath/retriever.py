"""Graph-based recurrent retriever.

State update (normalized RNN)::

    a_{t+1} = W_r [h_t; w] + b_r
    h_{t+1} = alpha * a_{t+1} / ||a_{t+1}||,     h_1 = alpha * s / ||s||

Candidate ``p`` at step ``t`` is selected with ``P(p | h_t) = sigmoid(w_p . h_t + b)``,
scored independently per candidate. ``[EOE]`` is scored with the standardized
[EOE] vector and ends a path.
"""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import encoder as enc
from .checkpoint import load_tensors, save_tensors, subset
from .errors import ConfigError, DivergenceError, NumericalError, UsageError
from .optim import AdamW, RowGrad, linear_warmup_schedule, sum_row_chunks

EOE = "[EOE]"
NORM_GUARD = 1e-12
PROB_CLIP = 1e-12


@dataclass
class RetrieverParams:
    W_r: np.ndarray  # (d, 2d)
    b_r: np.ndarray  # (d,)
    alpha: np.ndarray  # ()
    s: np.ndarray  # (d,)
    b: np.ndarray  # ()

    TENSORS = ("W_r", "b_r", "alpha", "s", "b")
    NO_DECAY = ("b_r", "alpha", "b")

    @property
    def d(self):
        return self.s.shape[0]

    def arrays(self):
        return {k: getattr(self, k) for k in self.TENSORS}

    def to_tensors(self, prefix="retriever."):
        return {prefix + k: v for k, v in self.arrays().items()}

    @classmethod
    def from_tensors(cls, tensors, prefix="retriever."):
        return cls(**{k: np.array(tensors[prefix + k], dtype=np.float64) for k in cls.TENSORS})

    def copy(self):
        return RetrieverParams(**{k: v.copy() for k, v in self.arrays().items()})

    def validate(self):
        if not float(self.alpha) > 0:
            raise ConfigError("alpha must be positive")
        for k, v in self.arrays().items():
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"retriever parameter {k} is not finite")


def init_retriever_params(d=64, seed=0):
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(2 * d)
    return RetrieverParams(
        W_r=rng.uniform(-bound, bound, size=(d, 2 * d)),
        b_r=np.zeros(d),
        alpha=np.array(1.0),
        s=rng.uniform(-0.1, 0.1, size=d),
        b=np.array(0.0),
    )


def _normalize(a, alpha):
    n = float(np.linalg.norm(a))
    if n < NORM_GUARD:
        raise NumericalError(f"state norm {n:.3g} below guard {NORM_GUARD}")
    return alpha * a / n, n


def init_state(params, question_vector=None):
    """``h_1``; with a question vector (question-independent encoders) one
    extra advance step conditions the state on the question."""
    h, _ = _normalize(params.s, float(params.alpha))
    if question_vector is not None:
        h = advance(params, h, question_vector)
    return h


def step_prob(params, h, w):
    return float(expit(np.dot(w, h) + float(params.b)))


def step_probs(params, h, W):
    return expit(W @ h + float(params.b))


def advance(params, h, w):
    a = params.W_r @ np.concatenate([h, w]) + params.b_r
    return _normalize(a, float(params.alpha))[0]


def _advance_cached(params, h, w):
    z = np.concatenate([h, w])
    a = params.W_r @ z + params.b_r
    h_next, n = _normalize(a, float(params.alpha))
    return h_next, (z, a / n, n)


def _advance_backward(params, cache, dh_next, grads):
    z, a_hat, n = cache
    alpha = float(params.alpha)
    grads["alpha"] += float(dh_next @ a_hat)
    da = (alpha / n) * (dh_next - a_hat * (a_hat @ dh_next))
    grads["W_r"] += np.outer(da, z)
    grads["b_r"] += da
    dz = params.W_r.T @ da
    d = params.d
    return dz[:d], dz[d:]


def _init_backward(params, dh1, grads):
    n = float(np.linalg.norm(params.s))
    s_hat = params.s / n
    alpha = float(params.alpha)
    grads["alpha"] += float(dh1 @ s_hat)
    grads["s"] += (alpha / n) * (dh1 - s_hat * (s_hat @ dh1))


# --------------------------------------------------------------------------
# search


class SearchMode(str, Enum):
    ADAPTIVE = "adaptive"
    GREEDY = "greedy"
    FIXED = "fixed"
    NO_RECURRENCE = "norec"
    CLOSED_POOL = "closed"


@dataclass
class RetrievalConfig:
    B: int = 8
    F: int = 500
    K: int = 1
    max_len: int = 3
    mode: SearchMode = SearchMode.ADAPTIVE
    fixed_length: int = None
    eoe_in_score: bool = True

    def __post_init__(self):
        self.mode = SearchMode(self.mode)
        if self.B < 1 or self.F < 1 or self.K < 0 or self.max_len < 1:
            raise ConfigError("require B >= 1, F >= 1, K >= 0, max_len >= 1")
        if self.mode is SearchMode.FIXED:
            if self.fixed_length is None or self.fixed_length < 1:
                raise ConfigError("fixed mode needs fixed_length >= 1")
            if self.fixed_length > self.max_len:
                raise ConfigError(
                    f"fixed length {self.fixed_length} exceeds max_len {self.max_len}")

    @classmethod
    def parse_mode(cls, text, **kwargs):
        """Build a config from a CLI mode string such as ``fixed:2``."""
        if text.startswith("fixed:"):
            return cls(mode=SearchMode.FIXED, fixed_length=int(text.split(":", 1)[1]), **kwargs)
        return cls(mode=SearchMode(text), **kwargs)


@dataclass(frozen=True)
class ReasoningPath:
    paragraphs: tuple
    terminated: bool
    log_score: float

    def __len__(self):
        return len(self.paragraphs)

    def to_record(self):
        return {"paragraphs": list(self.paragraphs), "log_score": self.log_score}


@dataclass(frozen=True)
class CandidateSet:
    step: int
    candidates: tuple
    includes_eoe: bool


def expand_candidates(graph, path, candidates, selected, probs, K, step, pool=None):
    """``C_{t+1}``: out-neighbors of ``selected`` then the ``K`` best carry-overs.

    Carry-overs are the highest-probability members of ``C_t`` other than
    ``selected`` that are not already on ``path`` (ties by id). Paragraphs on
    the path are never candidates. With ``pool`` set, only pool members are
    eligible.
    """
    on_path = set(path)
    on_path.add(selected)
    nbrs = [n for n in graph.neighbors(selected)
            if n not in on_path and (pool is None or n in pool)]
    taken = set(nbrs)
    rest = [c for c in candidates if c != EOE and c not in on_path and c not in taken]
    carry = sorted(rest, key=lambda c: (-probs[c], c))[:K]
    return CandidateSet(step + 1, tuple(nbrs + carry), includes_eoe=True)


class QueryScorer:
    """Per-question scoring model used by the search: caches candidate vectors."""

    def __init__(self, encoder_params, params, question, texts, recurrent=True):
        self.ep = encoder_params
        self.params = params
        self.question = question
        self.texts = texts
        self.recurrent = recurrent
        self._vectors = {}
        self._eoe = enc.eoe_vector(encoder_params)

    @property
    def n_encoded(self):
        return len(self._vectors)

    def init_state(self):
        if self.ep.mode is enc.EncoderMode.QUESTION_INDEPENDENT:
            wq = enc.forward(self.ep, [enc.question_features(self.ep, self.question)])[0][0]
            return init_state(self.params, wq)
        return init_state(self.params)

    def vectors(self, ids):
        missing = [i for i in dict.fromkeys(ids) if i not in self._vectors]
        if missing:
            feats = [enc.candidate_features(self.ep, self.question, self.texts[i]) for i in missing]
            out, _ = enc.forward(self.ep, feats)
            self._vectors.update(zip(missing, out))
        return np.stack([self._vectors[i] for i in ids])

    def probs(self, h, ids):
        return step_probs(self.params, h, self.vectors(ids))

    def eoe_prob(self, h):
        return step_prob(self.params, h, self._eoe)

    def advance(self, h, pid):
        if not self.recurrent:
            return h
        return advance(self.params, h, self.vectors([pid])[0])


@dataclass
class _Hyp:
    path: tuple
    score: float
    state: np.ndarray = None
    cands: tuple = ()
    probs: dict = field(default_factory=dict)
    done: bool = False


def _log(p):
    return math.log(min(max(float(p), PROB_CLIP), 1.0))


def _prune(hyps, B):
    best = {}
    for h in hyps:
        key = (h.path, h.done)
        if key not in best or h.score > best[key].score:
            best[key] = h
    ranked = sorted(best.values(), key=lambda h: (-h.score, h.path, h.done))
    return ranked[:B]


def search(model, graph, C1, config, pool=None):
    """Beam search over reasoning paths from the initial candidates ``C1``.

    Finalized hypotheses stay in the beam and compete with open ones; the
    search ends when every survivor has selected [EOE]. A path that reaches
    the length cap can only select [EOE].
    """
    C1 = list(dict.fromkeys(C1))
    if not C1:
        return []
    B = 1 if config.mode is SearchMode.GREEDY else config.B
    if config.mode is SearchMode.FIXED:
        cap, eoe_from = config.fixed_length, config.fixed_length
    else:
        cap, eoe_from = config.max_len, 1

    h1 = model.init_state()
    p1 = model.probs(h1, C1)
    probs1 = dict(zip(C1, p1.tolist()))
    beam = _prune([_Hyp((c,), _log(p), h1, tuple(C1), probs1) for c, p in zip(C1, p1)], B)

    while not all(h.done for h in beam):
        extended = []
        for hyp in beam:
            if hyp.done:
                extended.append(hyp)
                continue
            h = model.advance(hyp.state, hyp.path[-1])
            length = len(hyp.path)
            if length < cap:
                cs = expand_candidates(graph, hyp.path, hyp.cands, hyp.path[-1], hyp.probs,
                                       config.K, length, pool)
                if cs.candidates:
                    pr = model.probs(h, list(cs.candidates))
                    probs = dict(zip(cs.candidates, pr.tolist()))
                    for c, p in zip(cs.candidates, pr):
                        extended.append(_Hyp(hyp.path + (c,), hyp.score + _log(p), h,
                                             cs.candidates, probs))
            if length >= eoe_from:
                step = _log(model.eoe_prob(h)) if config.eoe_in_score else 0.0
                extended.append(_Hyp(hyp.path, hyp.score + step, done=True))
        beam = _prune(extended, B)
    return [ReasoningPath(h.path, True, h.score) for h in beam]


def beam_search(question, encoder_params, params, graph, index, config, texts,
                recurrent=None, pool=None, return_scorer=False):
    """Retrieve the top-``B`` reasoning paths for ``question``.

    ``texts`` maps para_id to paragraph text. ``pool`` supplies ``C1`` directly
    (closed-pool mode); otherwise ``C1`` is the TF-IDF top-``F``.
    """
    if recurrent is None:
        recurrent = config.mode is not SearchMode.NO_RECURRENCE
    if config.mode is SearchMode.CLOSED_POOL and pool is None:
        raise ConfigError("closed-pool mode needs a candidate pool")
    if pool is not None:
        C1, pool_set = list(pool), set(pool)
    else:
        C1, pool_set = [pid for pid, _ in index.top_f(question, config.F)], None
    scorer = QueryScorer(encoder_params, params, question, texts, recurrent=recurrent)
    paths = search(scorer, graph, C1, config, pool=pool_set)
    return (paths, scorer) if return_scorer else paths


def retrieve_greedy(question, encoder_params, params, graph, index, config, texts):
    cfg = RetrievalConfig(B=1, F=config.F, K=config.K, max_len=config.max_len,
                          mode=SearchMode.GREEDY, eoe_in_score=config.eoe_in_score)
    return beam_search(question, encoder_params, params, graph, index, cfg, texts)


def retrieve_fixed_length(question, encoder_params, params, graph, index, config, texts, L):
    cfg = RetrievalConfig(B=config.B, F=config.F, K=config.K, max_len=config.max_len,
                          mode=SearchMode.FIXED, fixed_length=L, eoe_in_score=config.eoe_in_score)
    return beam_search(question, encoder_params, params, graph, index, cfg, texts)


def retrieve_no_recurrence(question, encoder_params, params, graph, index, config, texts):
    cfg = RetrievalConfig(B=config.B, F=config.F, K=config.K, max_len=config.max_len,
                          mode=SearchMode.NO_RECURRENCE, eoe_in_score=config.eoe_in_score)
    return beam_search(question, encoder_params, params, graph, index, cfg, texts)


def retrieve_closed_pool(question, encoder_params, params, graph, pool, config, texts):
    cfg = RetrievalConfig(B=config.B, F=config.F, K=config.K, max_len=config.max_len,
                          mode=SearchMode.CLOSED_POOL, eoe_in_score=config.eoe_in_score)
    return beam_search(question, encoder_params, params, graph, None, cfg, texts, pool=pool)


# --------------------------------------------------------------------------
# training


def _zero_grads(params):
    return {k: np.zeros_like(v) for k, v in params.arrays().items()}


def retriever_loss(encoder_params, params, question, path, negatives, texts,
                   recurrent=True, with_grads=True):
    """Binary cross-entropy over one gold path with per-step negatives.

    ``path`` ends with :data:`EOE`; ``negatives[t]`` lists the negatives at
    step ``t`` (may include :data:`EOE`). States follow the gold path.
    Returns ``(loss, retriever_grads, encoder_grads)``.
    """
    ep = encoder_params
    if not path or path[-1] != EOE:
        raise UsageError("gold path must end with [EOE]")
    if len(negatives) != len(path):
        raise UsageError("need one negative set per step")

    rows = {}
    for t, gold in enumerate(path):
        for c in (gold, *negatives[t]):
            if c != EOE and c not in rows:
                rows[c] = len(rows)
    order = list(rows)
    if order:
        feats = [enc.candidate_features(ep, question, texts[pid]) for pid in order]
        W, pcache = enc.forward(ep, feats)
    else:
        W, pcache = np.zeros((0, ep.d)), None
    w_eoe, ecache = enc.eoe_forward(ep)

    qcache = None
    if ep.mode is enc.EncoderMode.QUESTION_INDEPENDENT:
        wq, qcache = enc.forward(ep, [enc.question_features(ep, question)])
        wq = wq[0]
        h0, _ = _normalize(params.s, float(params.alpha))
        h, init_cache = _advance_cached(params, h0, wq)
    else:
        h, _ = _normalize(params.s, float(params.alpha))

    b = float(params.b)
    loss = 0.0
    steps = []
    for t, gold in enumerate(path):
        cands = (gold, *negatives[t])
        idx = [rows[c] if c != EOE else -1 for c in cands]
        V = np.stack([w_eoe if i < 0 else W[i] for i in idx])
        p = expit(V @ h + b)
        y = np.zeros(len(cands))
        y[0] = 1.0
        pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
        loss -= float(np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
        dlogit = np.where((p < PROB_CLIP) | (p > 1.0 - PROB_CLIP), 0.0, p - y)
        adv = None
        if recurrent and t < len(path) - 1:
            h_next, adv = _advance_cached(params, h, V[0])
        steps.append((idx, V, dlogit, h, adv))
        if adv is not None:
            h = h_next

    if not math.isfinite(loss):
        raise DivergenceError("retriever loss is not finite")
    if not with_grads:
        return loss, None, None

    grads = _zero_grads(params)
    dW = np.zeros_like(W)
    d_eoe = np.zeros(ep.d)
    carry = np.zeros(ep.d)
    dh1_static = np.zeros(ep.d)
    for t in range(len(steps) - 1, -1, -1):
        idx, V, dlogit, h_t, adv = steps[t]
        grads["b"] += dlogit.sum()
        dV = np.outer(dlogit, h_t)
        dh = V.T @ dlogit
        if recurrent:
            dh = dh + carry
        else:
            dh1_static += dh
        for k, i in enumerate(idx):
            if i < 0:
                d_eoe += dV[k]
            else:
                dW[i] += dV[k]
        if recurrent and t > 0:
            prev_adv = steps[t - 1][4]
            dh_prev, dw_gold = _advance_backward(params, prev_adv, dh, grads)
            gi = steps[t - 1][0][0]
            if gi < 0:
                d_eoe += dw_gold
            else:
                dW[gi] += dw_gold
            carry = dh_prev
        elif recurrent:
            dh1_static = dh

    if qcache is not None:
        dh0, dwq = _advance_backward(params, init_cache, dh1_static, grads)
        _init_backward(params, dh0, grads)
    else:
        _init_backward(params, dh1_static, grads)

    egrads = {}
    if pcache is not None:
        enc.add_grads(egrads, enc.backward(ep, pcache, dW))
    enc.add_grads(egrads, enc.eoe_backward(ep, ecache, d_eoe))
    if qcache is not None:
        enc.add_grads(egrads, enc.backward(ep, qcache, dwq[None, :]))
    return loss, grads, egrads


@dataclass
class TrainingPath:
    question: str
    path: tuple
    negatives: tuple


@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 3
    batch_size: int = 4
    weight_decay: float = 0.01
    warmup: float = 0.1
    seed: int = 0
    log_every: int = 0
    lazy_rows: bool = True


def _flat_params(encoder_params, params):
    flat = {"retriever." + k: v for k, v in params.arrays().items()}
    flat.update({"encoder." + k: v for k, v in encoder_params.arrays().items()})
    no_decay = ["retriever." + k for k in params.NO_DECAY]
    no_decay += ["encoder." + k for k in encoder_params.NO_DECAY]
    return flat, no_decay


def train_retriever(items, encoder_params, params, texts, config=TrainConfig(), recurrent=True,
                    log=None):
    """Minimize the summed path loss with AdamW; updates parameters in place.

    ``items`` are :class:`TrainingPath` objects (gold and augmented paths).
    Returns the list of per-epoch mean losses.
    """
    if not items:
        raise UsageError("no training paths")
    flat, no_decay = _flat_params(encoder_params, params)
    opt = AdamW(flat, lr=config.lr, weight_decay=config.weight_decay, no_decay=no_decay,
                lazy_rows=config.lazy_rows)
    rng = np.random.default_rng(config.seed)
    n_batches = math.ceil(len(items) / config.batch_size)
    total = n_batches * config.epochs
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(items))
        epoch_loss = 0.0
        for bstart in range(0, len(items), config.batch_size):
            batch = [items[i] for i in order[bstart:bstart + config.batch_size]]
            rgrads = _zero_grads(params)
            egrads = {}
            batch_loss = 0.0
            for it in batch:
                loss, rg, eg = retriever_loss(encoder_params, params, it.question, it.path,
                                              it.negatives, texts, recurrent=recurrent)
                batch_loss += loss
                for k in rgrads:
                    rgrads[k] += rg[k]
                enc.add_grads(egrads, eg)
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"loss diverged at epoch {epoch}, step {step}")
            scale = 1.0 / len(batch)
            grads = {"retriever." + k: v * scale for k, v in rgrads.items()}
            for k, v in egrads.items():
                if k == "embedding_rows":
                    rows, vals = sum_row_chunks(v, encoder_params.embedding.shape[1])
                    grads["encoder.embedding"] = RowGrad(rows, vals * scale)
                else:
                    grads["encoder." + k] = v * scale
            opt.step(grads, linear_warmup_schedule(step, total, config.warmup))
            step += 1
            epoch_loss += batch_loss
        history.append(epoch_loss / len(items))
        if log is not None:
            log(f"retriever epoch {epoch + 1}/{config.epochs} loss {history[-1]:.4f}")
    return history


def total_loss(items, encoder_params, params, texts, recurrent=True):
    return sum(retriever_loss(encoder_params, params, it.question, it.path, it.negatives,
                              texts, recurrent=recurrent, with_grads=False)[0] for it in items)


# --------------------------------------------------------------------------
# estimator


class RecurrentRetriever(BaseEstimator):
    """Estimator facade over the encoder + normalized-RNN retriever.

    ``fit`` takes :class:`TrainingPath` items plus a ``texts`` mapping;
    ``predict`` returns the top-``B`` paths per question.
    """

    def __init__(self, d=64, bucket_count=1 << 16, encoder_mode="question-dependent",
                 recurrent=True, beam_size=8, F=500, K=1, max_len=3, mode="adaptive",
                 eoe_in_score=True, lr=1e-2, epochs=3, batch_size=4, weight_decay=0.01,
                 warmup=0.1, seed=0, max_tokens=enc.MAX_TOKENS):
        self.d = d
        self.bucket_count = bucket_count
        self.encoder_mode = encoder_mode
        self.recurrent = recurrent
        self.beam_size = beam_size
        self.F = F
        self.K = K
        self.max_len = max_len
        self.mode = mode
        self.eoe_in_score = eoe_in_score
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.seed = seed
        self.max_tokens = max_tokens

    def _init_params(self):
        self.encoder_params_ = enc.init_encoder_params(
            self.d, self.bucket_count, self.encoder_mode, seed=self.seed,
            max_tokens=self.max_tokens)
        self.params_ = init_retriever_params(self.d, seed=self.seed + 1)

    def fit(self, items, texts, log=None):
        self._init_params()
        cfg = TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                          weight_decay=self.weight_decay, warmup=self.warmup, seed=self.seed)
        self.loss_history_ = train_retriever(list(items), self.encoder_params_, self.params_,
                                             texts, cfg, recurrent=self.recurrent, log=log)
        return self

    def config(self, **overrides):
        kw = dict(B=self.beam_size, F=self.F, K=self.K, max_len=self.max_len,
                  eoe_in_score=self.eoe_in_score)
        mode = overrides.pop("mode", self.mode)
        kw.update(overrides)
        if isinstance(mode, str) and mode.startswith("fixed:"):
            return RetrievalConfig.parse_mode(mode, **kw)
        if mode == "fixed" or mode is SearchMode.FIXED:
            return RetrievalConfig(mode=SearchMode.FIXED, **kw)
        if not self.recurrent and SearchMode(mode) is SearchMode.ADAPTIVE:
            mode = SearchMode.NO_RECURRENCE
        return RetrievalConfig(mode=SearchMode(mode), **kw)

    def retrieve(self, question, index, graph, texts, pool=None, **overrides):
        check_is_fitted(self, "params_")
        cfg = self.config(**overrides)
        return beam_search(question, self.encoder_params_, self.params_, graph, index, cfg,
                           texts, pool=pool)

    def predict(self, questions, index, graph, texts, **overrides):
        return [self.retrieve(q, index, graph, texts, **overrides) for q in questions]

    def score_candidates(self, question, ids, texts):
        """``P(p | h_1)`` for each id: the frozen-state re-ranking score."""
        check_is_fitted(self, "params_")
        scorer = QueryScorer(self.encoder_params_, self.params_, question, texts)
        return scorer.probs(scorer.init_state(), list(ids))

    def to_tensors(self):
        check_is_fitted(self, "params_")
        out = self.encoder_params_.to_tensors()
        out.update(self.params_.to_tensors())
        out["retriever.config.recurrent"] = np.array(float(self.recurrent))
        return out

    def save(self, path):
        save_tensors(self.to_tensors(), path)

    @classmethod
    def from_tensors(cls, tensors, **kwargs):
        ep = enc.EncoderParams.from_tensors(tensors)
        rp = RetrieverParams.from_tensors(tensors)
        recurrent = bool(tensors.get("retriever.config.recurrent", np.array(1.0)))
        obj = cls(d=ep.d, bucket_count=ep.bucket_count, encoder_mode=ep.mode.value,
                  recurrent=recurrent, max_tokens=ep.max_tokens, **kwargs)
        obj.encoder_params_, obj.params_ = ep, rp
        return obj

    @classmethod
    def load(cls, path, **kwargs):
        tensors = load_tensors(path)
        if not subset(tensors, "retriever."):
            raise UsageError(f"{path} has no retriever tensors")
        return cls.from_tensors(tensors, **kwargs)
