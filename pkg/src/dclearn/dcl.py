"""Reference bookkeeping, constraint assembly and the per-step correction.

Rows of the constraint matrix are the displacements ``w - r_i`` from each
reference snapshot to the current tracked weights, followed by ``-g_s`` for
each memory gradient. The corrected gradient satisfies ``A @ g_tilde <= 0``,
which keeps the update ``-lr * g_tilde`` within 90 degrees of every
displacement and of every memory gradient.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .numerics import EPS_ZERO, DimensionError, as_vec, empty_rows, norm


@dataclass(frozen=True)
class DclConfig:
    """``n_r`` references refreshed every ``beta_w`` steps at offset ``beta_o``.

    ``beta_w = math.inf`` never refreshes: the references are taken once,
    at step ``beta_o``, and kept for the rest of the run (or task).
    """

    n_r: int = 1
    beta_w: float = math.inf
    beta_o: int = 0
    use_memory: bool = False

    def __post_init__(self):
        if int(self.n_r) != self.n_r or self.n_r < 0:
            raise ValueError("n_r must be a non-negative integer")
        if self.beta_w != math.inf and (int(self.beta_w) != self.beta_w or self.beta_w < 1):
            raise ValueError("beta_w must be a positive integer or inf")
        if int(self.beta_o) != self.beta_o or self.beta_o < 0:
            raise ValueError("beta_o must be a non-negative integer")
        if self.beta_o >= self.beta_w:
            raise ValueError("beta_o must be smaller than beta_w")

    @property
    def label(self):
        w = "inf" if self.beta_w == math.inf else str(int(self.beta_w))
        return f"DCL-{w}-{self.n_r}" + ("-MEM" if self.use_memory else "")


@dataclass
class DclState:
    refs: list = field(default_factory=list)
    step: int = 0
    resets_pending: int = 0
    last_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    last_A: np.ndarray = None
    corrected_last: bool = False

    @property
    def refs_set(self):
        return len(self.refs)

    def clear(self):
        """Forget references and restart the step counter (new episode)."""
        self.refs = []
        self.step = 0
        self.resets_pending = 0
        self.last_v = np.zeros(0)
        self.last_A = None
        self.corrected_last = False


class MemoryBank:
    """First-come sample store; extra samples beyond capacity are ignored."""

    def __init__(self, capacity):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.samples = []

    def __len__(self):
        return len(self.samples)

    def add(self, x, y):
        if len(self.samples) >= self.capacity:
            return False
        self.samples.append((np.array(x, dtype=np.float64), int(y)))
        return True

    def extend(self, X, Y):
        for x, y in zip(X, Y):
            if not self.add(x, y):
                break

    def clear(self):
        self.samples = []

    def arrays(self):
        X = np.array([s[0] for s in self.samples])
        Y = np.array([s[1] for s in self.samples], dtype=np.int64)
        return X, Y


def should_reset(t, cfg):
    if t < 0:
        raise ValueError("step must be >= 0")
    return cfg.beta_w != math.inf and t % int(cfg.beta_w) == cfg.beta_o


def _window_opens(t, cfg):
    # an infinite window still needs its one initial reference set
    return should_reset(t, cfg) or (cfg.beta_w == math.inf and t == cfg.beta_o)


def build_constraint_rows(w, state, memory_grads=()):
    w = as_vec(w, name="w")
    rows = []
    for r in state.refs:
        if r.shape != w.shape:
            raise DimensionError(f"reference of length {r.shape[0]} vs weights of length {w.shape[0]}")
        d = w - r
        if norm(d) > EPS_ZERO:
            rows.append(d)
    for gs in memory_grads:
        gs = as_vec(gs, name="memory gradient")
        if gs.shape != w.shape:
            raise DimensionError(f"memory gradient of length {gs.shape[0]} vs weights of length {w.shape[0]}")
        if norm(gs) > EPS_ZERO:
            rows.append(-gs)
    if not rows:
        return empty_rows(w.shape[0])
    return np.vstack(rows)


def dcl_apply(g, w, state, cfg, memory_grads=()):
    """Corrected gradient for the current step; advances ``state.step``.

    While references are being (re)set the reference rows are suspended and
    the raw gradient passes through; memory rows, if any, still apply.
    """
    g = as_vec(g, name="g")
    w = as_vec(w, name="w")
    if g.shape != w.shape:
        raise DimensionError("gradient and weights differ in length")
    t = state.step
    state.step += 1

    in_reset = False
    if cfg.n_r > 0:
        if _window_opens(t, cfg):
            state.refs = []
            state.resets_pending = cfg.n_r
        if state.resets_pending > 0:
            state.refs.append(w.copy())
            state.resets_pending -= 1
            in_reset = True

    if in_reset:
        A = build_constraint_rows(w, DclState(), memory_grads)
    else:
        A = build_constraint_rows(w, state, memory_grads)
    state.last_A = A
    if A.shape[0] == 0:
        state.last_v = np.zeros(0)
        state.corrected_last = False
        return g.copy()
    res = qp.correct_gradient(g, A)
    state.last_v = res.v
    state.corrected_last = res.converged and bool(np.any(res.v > 0))
    return res.g_tilde


def memory_gradients(bank, model, loss, per_sample=True):
    """Tracked-layer gradients of the stored samples at the current weights.

    ``per_sample=False`` returns a single row: the gradient of the mean loss
    over the whole bank.
    """
    from .model import Batch, loss_and_grad, tracked_gradient

    if len(bank) == 0:
        return []
    X, Y = bank.arrays()
    if not per_sample:
        _, grads = loss_and_grad(model, Batch(X, Y), loss)
        return [tracked_gradient(grads)]
    out = []
    for i in range(len(Y)):
        _, grads = loss_and_grad(model, Batch(X[i : i + 1], Y[i : i + 1]), loss)
        out.append(tracked_gradient(grads))
    return out
