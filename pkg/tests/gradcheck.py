import numpy as np

H = 1e-5
FLOOR = 1e-6


def numeric_grad(loss_fn, array, h=H):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``array`` (mutated in place)."""
    g = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = array[idx]
        array[idx] = old + h
        up = loss_fn()
        array[idx] = old - h
        down = loss_fn()
        array[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
