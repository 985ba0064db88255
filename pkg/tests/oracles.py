"""Independent reference implementations used to check the real code.

Everything here is deliberately written the slow, obvious way (python
loops, Fraction arithmetic) and never calls into the code paths it checks.
"""

from fractions import Fraction
from math import sqrt

import numpy as np


# ---------------------------------------------------------------------------
# scalar desk computation of the encoder pipeline (eval mode, one row)

def scalar_forward_eval(config, params, buffers, x_row):
    """Pure-python walk through linear/bn/leakyrelu/residual/projection."""
    p = {k: np.asarray(v, dtype=np.float64).tolist() for k, v in params.items()}
    b = {k: np.asarray(v, dtype=np.float64).tolist() for k, v in buffers.items()}
    x = [float(v) for v in x_row]

    def linear(inp, w, bias):
        return [
            sum(inp[i] * w[i][j] for i in range(len(inp))) + bias[j]
            for j in range(len(bias))
        ]

    def bn_eval(z, gamma, beta, rmean, rvar):
        return [
            gamma[j] * (z[j] - rmean[j]) / sqrt(rvar[j] + config.bn_eps) + beta[j]
            for j in range(len(z))
        ]

    def leaky(a):
        return [v if v >= 0 else config.leaky_slope * v for v in a]

    h1 = leaky(bn_eval(linear(x, p["w1"], p["b1"]),
                       p["gamma1"], p["beta1"], b["rmean1"], b["rvar1"]))
    l2 = leaky(bn_eval(linear(h1, p["w2"], p["b2"]),
                       p["gamma2"], p["beta2"], b["rmean2"], b["rvar2"]))
    h2 = [l2[j] + h1[j] for j in range(len(h1))]
    h3 = leaky(bn_eval(linear(h2, p["w3"], p["b3"]),
                       p["gamma3"], p["beta3"], b["rmean3"], b["rvar3"]))
    z4 = linear(h3, p["w4"], p["b4"])
    norm = sqrt(sum(v * v for v in z4))
    return [v / norm for v in z4]


# ---------------------------------------------------------------------------
# central finite differences over every parameter tensor

def finite_difference_gradients(loss_fn, params, h=1e-4):
    """loss_fn(params_dict) -> float; params are float32 arrays.

    Perturbs each element up and down (rounded to float32, with the true
    achieved step used as the divisor) and returns gradient arrays.
    """
    grads = {}
    for name, tensor in params.items():
        grad = np.zeros(tensor.shape, dtype=np.float64)
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            plus = np.float32(float(original) + h)
            minus = np.float32(float(original) - h)
            flat[i] = plus
            f_plus = loss_fn(params)
            flat[i] = minus
            f_minus = loss_fn(params)
            flat[i] = original
            step = float(plus) - float(minus)
            grad.reshape(-1)[i] = (f_plus - f_minus) / step
        grads[name] = grad
    return grads


def max_relative_gradient_error(analytic, numeric, zero_floor=1e-8):
    """Largest relative disagreement; exact zeros on both sides match."""
    worst = 0.0
    for name in analytic:
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        f = np.asarray(numeric[name], dtype=np.float64).reshape(-1)
        for x, y in zip(a, f):
            if abs(x) < zero_floor and abs(y) < zero_floor:
                continue
            worst = max(worst, abs(x - y) / max(abs(x), abs(y)))
    return worst


# ---------------------------------------------------------------------------
# brute-force exact top-k scan over (id, vector) entries

def brute_force_topk(entries, query, k):
    """entries: list of (entry_id, raw_vector). Normalizes the same way the
    index documents (float32 unit vectors), scores in float64 with plain
    loops, sorts by (-score, entry_id)."""
    qv = np.asarray(query, dtype=np.float32)
    qn = float(np.linalg.norm(qv.astype(np.float64)))
    q = [float(v) / qn for v in qv.astype(np.float64)]
    scored = []
    for entry_id, vec in entries:
        sv = np.asarray(vec, dtype=np.float32)
        n = float(np.linalg.norm(sv.astype(np.float64)))
        stored = (sv.astype(np.float64) / n).astype(np.float32)
        score = sum(float(stored[i]) * q[i] for i in range(len(q)))
        scored.append((entry_id, score))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


# ---------------------------------------------------------------------------
# textbook LRU/LFU replay simulator

class EvictionSimulator:
    """Replays an access string with insert-on-miss, recording victims.

    Semantics mirrored from the documented cache contract: one logical tick
    per operation, insertion counts as the first access, LFU ties resolve
    to the least recently used entry.
    """

    def __init__(self, capacity, policy):
        self.capacity = capacity
        self.policy = policy
        self.clock = 0
        self.entries = {}  # key -> [last_access, access_count]
        self.victims = []
        self.hits = 0
        self.misses = 0

    def access(self, key):
        self.clock += 1  # the lookup
        if key in self.entries:
            meta = self.entries[key]
            meta[0] = self.clock
            meta[1] += 1
            self.hits += 1
            return True
        self.misses += 1
        self.clock += 1  # the insert that follows the miss
        if len(self.entries) >= self.capacity:
            if self.policy == "lru":
                victim = min(self.entries, key=lambda k: self.entries[k][0])
            else:
                victim = min(
                    self.entries,
                    key=lambda k: (self.entries[k][1], self.entries[k][0]),
                )
            del self.entries[victim]
            self.victims.append(victim)
        self.entries[key] = [self.clock, 1]
        return False


# ---------------------------------------------------------------------------
# exhaustive F1 threshold sweep with exact rational arithmetic

def exhaustive_f1_sweep(scores, labels, grid_step):
    """Returns (best_threshold, best_f1_fraction); ties go to the larger
    threshold, like the documented optimizer contract."""
    scores = [float(s) for s in scores]
    labels = [int(l) for l in labels]
    lo, hi = min(scores), max(scores)
    n_steps = int(np.floor((hi - lo) / grid_step + 1e-9))
    grid = [lo + i * grid_step for i in range(n_steps + 1)]
    if grid[-1] < hi:
        grid.append(hi)
    best_t, best_f1 = None, Fraction(-1)
    for t in grid:
        tp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 1)
        fp = sum(1 for s, l in zip(scores, labels) if s >= t and l == 0)
        fn = sum(1 for s, l in zip(scores, labels) if s < t and l == 1)
        f1 = Fraction(2 * tp, 2 * tp + fp + fn) if 2 * tp + fp + fn > 0 else Fraction(0)
        if f1 > best_f1 or (f1 == best_f1 and (best_t is None or t > best_t)):
            best_t, best_f1 = t, f1
    return best_t, best_f1
