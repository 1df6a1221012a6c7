"""Comparator strategies returning two-paragraph pseudo-paths."""
from .errors import ConfigError


def baseline_tfidf_top2(question, index):
    return tuple(pid for pid, _ in index.top_f(question, 2))


def _top2_by_score(question, pool, scorer, texts):
    if not pool:
        return ()
    probs = scorer.score_candidates(question, pool, texts)
    rank = {pid: k for k, pid in enumerate(pool)}
    ranked = sorted(zip(pool, probs.tolist()), key=lambda x: (-x[1], rank[x[0]]))
    return tuple(pid for pid, _ in ranked[:2])


def baseline_rerank(question, index, scorer, texts, F=20):
    """Top-``F`` TF-IDF paragraphs re-scored with the frozen-state scorer."""
    if F < 1:
        raise ConfigError("F must be >= 1")
    pool = [pid for pid, _ in index.top_f(question, F)]
    return _top2_by_score(question, pool, scorer, texts)


def rerank_2hop_pool(question, index, graph, F=20):
    """Top-``F`` TF-IDF paragraphs followed by their out-neighbors (first-seen order)."""
    top = [pid for pid, _ in index.top_f(question, F)]
    pool = list(top)
    seen = set(pool)
    for pid in top:
        for nb in graph.neighbors(pid):
            if nb not in seen:
                seen.add(nb)
                pool.append(nb)
    return pool


def baseline_rerank_2hop(question, index, graph, scorer, texts, F=20):
    if F < 1:
        raise ConfigError("F must be >= 1")
    return _top2_by_score(question, rerank_2hop_pool(question, index, graph, F), scorer, texts)
