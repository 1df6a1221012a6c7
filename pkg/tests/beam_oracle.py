"""Stub scoring model and an exhaustive path enumerator for beam-search checks."""
import math
import zlib

import numpy as np

from reasonpath.corpus import WikiGraph

CLIP = 1e-12


def clipped_log(p):
    return math.log(min(max(p, CLIP), 1.0))


class StubModel:
    """State is the path so far; probabilities are fixed functions of (state, id)."""

    def __init__(self, prob, eoe):
        self.prob = prob
        self.eoe = eoe

    def init_state(self):
        return ()

    def probs(self, h, ids):
        return np.array([self.prob(h, i) for i in ids])

    def eoe_prob(self, h):
        return self.eoe(h)

    def advance(self, h, pid):
        return h + (pid,)


def hashed_model(seed):
    def u(*parts):
        key = repr((seed,) + parts).encode()
        return (zlib.crc32(key) % 10_000 + 1) / 10_002

    return StubModel(lambda h, i: u("p", h, i), lambda h: u("e", h))


def enumerate_paths(model, adjacency, C1, K, cap, eoe_from=1):
    """Every terminated path with its score, sorted best first (ties by path ids)."""
    out = []

    def carry(cands, probs, path):
        rest = [c for c in cands if c not in path]
        return sorted(rest, key=lambda c: (-probs[c], c))

    def rec(path, score, cands, probs):
        state = tuple(path)
        if len(path) >= eoe_from:
            out.append((tuple(path), score + clipped_log(model.eoe_prob(state))))
        if len(path) >= cap:
            return
        nbrs = [n for n in adjacency[path[-1]] if n not in path]
        extra = [c for c in carry(cands, probs, path) if c not in nbrs][:K]
        nxt = nbrs + extra
        p = {c: model.prob(state, c) for c in nxt}
        for c in nxt:
            rec(path + [c], score + clipped_log(p[c]), nxt, p)

    first = {c: model.prob((), c) for c in C1}
    for c in C1:
        rec([c], clipped_log(first[c]), list(C1), first)
    return sorted(out, key=lambda x: (-x[1], x[0]))


def random_graph(rng, n_nodes):
    ids = [f"n{i}" for i in range(n_nodes)]
    adjacency = {}
    for u in ids:
        k = int(rng.integers(0, min(3, n_nodes - 1) + 1))
        others = [v for v in ids if v != u]
        adjacency[u] = sorted(rng.choice(others, size=k, replace=False).tolist()) if k else []
    return WikiGraph(adjacency=adjacency)
