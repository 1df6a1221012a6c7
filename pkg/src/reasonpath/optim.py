"""Adam with decoupled weight decay and a linear warm-up/decay schedule."""
import numpy as np

from .errors import DivergenceError


def linear_warmup_schedule(step, total_steps, warmup_fraction):
    """Multiplier in [0, 1]: linear ramp over the warm-up steps, then linear decay to 0."""
    warmup = int(warmup_fraction * total_steps)
    if step < warmup:
        return (step + 1) / (warmup + 1)
    if total_steps <= warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


def sum_row_chunks(chunks, n_cols):
    """Merge ``[(rows, vals)]`` chunks into unique sorted rows with summed values."""
    if not chunks:
        return np.zeros(0, dtype=np.int64), np.zeros((0, n_cols))
    rows = np.concatenate([np.asarray(r, dtype=np.int64) for r, _ in chunks])
    vals = np.concatenate([np.asarray(v, dtype=np.float64).reshape(-1, n_cols)
                           for _, v in chunks])
    uniq, inv = np.unique(rows, return_inverse=True)
    out = np.zeros((len(uniq), n_cols))
    np.add.at(out, inv.ravel(), vals)
    return uniq, out


class RowGrad:
    """Gradient of a 2-D table given only on ``rows`` (unique, ascending); other rows are 0."""

    __slots__ = ("rows", "values")

    def __init__(self, rows, values):
        self.rows = rows
        self.values = values

    def dense(self, shape):
        g = np.zeros(shape)
        g[self.rows] = self.values
        return g


class AdamW:
    """In-place optimizer over a dict of parameter arrays.

    ``no_decay`` names parameters exempt from weight decay (biases and
    normalization gain/shift). A gradient may be a :class:`RowGrad`. With
    ``lazy_rows=False`` the update is then identical to the dense one, with
    moment arithmetic restricted to rows that have ever received a gradient
    (untouched rows have zero moments, so only weight decay moves them). With
    ``lazy_rows=True`` moments and steps apply only to the rows present in the
    current gradient, so a row seen once is not carried along by stale momentum
    for many later steps.
    """

    def __init__(self, params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, no_decay=(), lazy_rows=False):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.lazy_rows = lazy_rows
        self.t = 0
        self._active = {}

    def _moments(self, m, v, g, lr, c1, c2):
        m *= self.b1
        m += (1.0 - self.b1) * g
        v *= self.b2
        v += (1.0 - self.b2) * (g * g)
        return (m / c1) / (np.sqrt(v / c2) + self.eps) * lr

    def step(self, grads, lr_scale=1.0):
        self.t += 1
        lr = self.lr * lr_scale
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            decay = self.weight_decay and name not in self.no_decay
            if isinstance(g, RowGrad):
                if not np.isfinite(g.values).all():
                    raise DivergenceError(f"non-finite gradient for {name} at step {self.t}")
                if self.lazy_rows:
                    active, dense = g.rows, g.values
                else:
                    active = self._active.get(name)
                    active = g.rows if active is None else np.union1d(active, g.rows)
                    self._active[name] = active
                    dense = np.zeros((len(active), p.shape[1]))
                    dense[np.searchsorted(active, g.rows)] = g.values
                m = self.m[name][active]
                v = self.v[name][active]
                upd = self._moments(m, v, dense, lr, c1, c2)
                self.m[name][active] = m
                self.v[name][active] = v
                if decay:
                    p -= (lr * self.weight_decay) * p
                p[active] -= upd
                continue
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for {name} at step {self.t}")
            upd = self._moments(self.m[name], self.v[name], g, lr, c1, c2)
            if decay:
                p -= (lr * self.weight_decay) * p
            p -= upd
