"""Congruency, magnitude and bound computations over recorded traces.

A record stores the tracked weights ``w`` at the start of the step, the raw
gradient ``g`` and the gradient actually applied ``g_tilde`` (equal to ``g``
when nothing was corrected). Every congruency here is computed from the
applied gradients. Steps are addressed by position in the record list, so a
downsampled trace simply sums over the steps it kept.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numerics import EPS_ZERO, cosine_or_none, norm


class TraceRecord(NamedTuple):
    t: int
    epoch: int
    w: np.ndarray
    g: np.ndarray
    g_tilde: np.ndarray
    loss: float
    lr: float
    corrected: bool


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    diverged: bool = False
    final_w: np.ndarray = None  # tracked weights after the last recorded step

    def __len__(self):
        return len(self.records)

    def append(self, rec):
        if self.records:
            last = self.records[-1]
            if rec.t <= last.t:
                raise ValueError("step index must increase")
            if rec.epoch < last.epoch:
                raise ValueError("epoch must not decrease")
            if rec.w.shape != last.w.shape:
                raise ValueError("tracked vector length changed")
        self.records.append(rec)

    def epochs(self):
        return sorted({r.epoch for r in self.records})

    def applied(self):
        return np.array([r.g_tilde for r in self.records])

    def weights(self):
        return np.array([r.w for r in self.records])


def mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def congruency_at(trace, k, m=0):
    """Cosine between the applied gradient at k and the sum over steps m..k-1."""
    if not 0 <= m < k < len(trace):
        raise IndexError(f"need 0 <= m < k < {len(trace)}, got m={m}, k={k}")
    G = trace.applied()
    acc = G[m:k].sum(axis=0)
    return cosine_or_none(G[k], acc)


def congruency_series(trace, m=0):
    """Congruency at every k > m (None where undefined); index 0 is k = m + 1."""
    if len(trace) <= m + 1:
        return []
    G = trace.applied()
    S = np.cumsum(G[m:], axis=0)
    return [cosine_or_none(G[k], S[k - 1 - m]) for k in range(m + 1, len(G))]


def epoch_congruencies(trace, m=0):
    """Mean step congruency per epoch, keyed by epoch; None if all undefined."""
    series = congruency_series(trace, m)
    by_epoch = {}
    for k, val in zip(range(m + 1, len(trace)), series):
        by_epoch.setdefault(trace.records[k].epoch, []).append(val)
    return {e: mean_or_none(by_epoch.get(e, [])) for e in trace.epochs()}


def epoch_congruency(trace, epoch, m=0):
    if epoch not in trace.epochs():
        raise KeyError(f"epoch {epoch} not in trace")
    return epoch_congruencies(trace, m)[epoch]


def path_congruency(trace, m=0):
    """Whole-run congruency: mean of the step values, referring to step m."""
    return mean_or_none(congruency_series(trace, m))


def magnitude(trace, epoch, mode="absolute"):
    """Mean distance of the epoch's weights from the first recorded weights
    (absolute) or from the previous record (relative)."""
    if mode not in ("absolute", "relative"):
        raise ValueError(f"unknown mode {mode!r}")
    idx = [i for i, r in enumerate(trace.records) if r.epoch == epoch]
    if not idx:
        raise KeyError(f"epoch {epoch} not in trace")
    W = trace.weights()
    if mode == "absolute":
        return float(np.mean([norm(W[i] - W[0]) for i in idx]))
    idx = [i for i in idx if i > 0]
    if not idx:
        return 0.0
    return float(np.mean([norm(W[i] - W[i - 1]) for i in idx]))


@dataclass(frozen=True)
class BoundInput:
    grad_history: np.ndarray  # rows are grad f(x_0), ..., grad f(x_k)
    L: float
    eta: float

    def __post_init__(self):
        G = np.asarray(self.grad_history, dtype=np.float64)
        if G.ndim != 2 or G.shape[0] < 2:
            raise ValueError("need at least two gradients")
        if not np.all(np.isfinite(G)):
            raise ValueError("gradient history is not finite")
        if not self.L > 0 or not self.eta > 0:
            raise ValueError("L and eta must be positive")
        object.__setattr__(self, "grad_history", G)


def _bound_terms(b, k):
    G = b.grad_history
    if not 1 <= k < G.shape[0]:
        raise IndexError(f"k={k} outside 1..{G.shape[0] - 1}")
    past = G[:k]
    norms = np.linalg.norm(past, axis=1)
    prefix = np.vstack([np.zeros(G.shape[1]), np.cumsum(past, axis=0)[:-1]])
    cross = float(np.sum(norms * np.linalg.norm(prefix, axis=1)))
    gk = norm(G[k])
    s = norm(past.sum(axis=0))
    return norms, cross, gk, s


def congruency_lower_bound(b, k):
    """Closed-form lower bound on the GD congruency at step k w.r.t. x_0.

    max{(1 - L eta) sum|g_i| / |g_k| - L eta sum|g_i||S_i| / (|g_k||S_k|), -1}
    with S_i the sum of the gradients before step i. None when |g_k| or
    |S_k| vanishes.
    """
    norms, cross, gk, s = _bound_terms(b, k)
    if gk <= EPS_ZERO or s <= EPS_ZERO:
        return None
    le = b.L * b.eta
    val = (1 - le) * norms.sum() / gk - le * cross / (gk * s)
    return max(val, -1.0)


def congruency_lower_bound_unsimplified(b, k):
    """The same bound before dropping the factor sum|g_i| / |S_k| >= 1:

    max{[(1 - L eta) sum|g_i|^2 - L eta sum|g_i||S_i|] / (|g_k||S_k|), -1}
    """
    norms, cross, gk, s = _bound_terms(b, k)
    if gk <= EPS_ZERO or s <= EPS_ZERO:
        return None
    le = b.L * b.eta
    val = ((1 - le) * float(np.sum(norms**2)) - le * cross) / (gk * s)
    return max(val, -1.0)


def power_iteration(Q, tol=1e-10, max_iter=100_000, rng=None):
    """Largest eigenvalue of a symmetric PSD matrix."""
    Q = np.asarray(Q, dtype=np.float64)
    rng = np.random.default_rng(0) if rng is None else rng
    x = rng.standard_normal(Q.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = Q @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = float(x @ y)
        x = y / ny
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


def pairwise_sample_congruency(model, loss, s1, s2):
    """Cosine of the tracked-layer gradients of two batches at fixed weights."""
    from .model import loss_and_grad, tracked_gradient

    _, g1 = loss_and_grad(model, s1, loss)
    _, g2 = loss_and_grad(model, s2, loss)
    return cosine_or_none(tracked_gradient(g1), tracked_gradient(g2))
