"""First-order step rules and learning-rate schedules.

Step functions take the parameter array, the gradient to apply and a mutable
per-parameter state. They never look at where the gradient came from, so a
corrected gradient and a raw one go through exactly the same arithmetic.
Weight decay is L2-coupled: it is added to the gradient before anything else.
"""

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("sgd", "rmsprop", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        vals = (self.lr, self.momentum, self.weight_decay, self.beta1, self.beta2, self.alpha, self.eps)
        if not all(math.isfinite(x) for x in vals):
            raise ValueError("optimizer hyperparameters must be finite")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        for name in ("beta1", "beta2", "alpha"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def with_lr(self, lr):
        return OptimizerConfig(**{**self.__dict__, "lr": lr})


@dataclass
class OptimizerState:
    m: np.ndarray = None
    s: np.ndarray = None
    t: int = 0

    @classmethod
    def like(cls, w):
        return cls(np.zeros_like(w, dtype=np.float64), np.zeros_like(w, dtype=np.float64), 0)

    def copy(self):
        return OptimizerState(self.m.copy(), self.s.copy(), self.t)


def _check(w, g, st):
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape:
        raise ValueError(f"parameter shape {w.shape} != gradient shape {g.shape}")
    if st.m is None:
        st.m = np.zeros_like(w)
        st.s = np.zeros_like(w)
    if st.m.shape != w.shape:
        raise ValueError(f"optimizer state shape {st.m.shape} != parameter shape {w.shape}")
    return w, g


def _decayed(w, g, cfg):
    return g + cfg.weight_decay * w if cfg.weight_decay else g


def sgd_step(w, g, st, cfg):
    w, g = _check(w, g, st)
    g = _decayed(w, g, cfg)
    st.m = cfg.momentum * st.m + g
    st.t += 1
    return w - cfg.lr * st.m


def rmsprop_step(w, g, st, cfg):
    """Uncentered RMSProp; momentum buffers the already-scaled step."""
    w, g = _check(w, g, st)
    g = _decayed(w, g, cfg)
    st.s = cfg.alpha * st.s + (1 - cfg.alpha) * g * g
    st.m = cfg.momentum * st.m + g / np.sqrt(st.s + cfg.eps)
    st.t += 1
    return w - cfg.lr * st.m


def adam_step(w, g, st, cfg):
    w, g = _check(w, g, st)
    g = _decayed(w, g, cfg)
    st.t += 1
    st.m = cfg.beta1 * st.m + (1 - cfg.beta1) * g
    st.s = cfg.beta2 * st.s + (1 - cfg.beta2) * g * g
    m_hat = st.m / (1 - cfg.beta1**st.t)
    v_hat = st.s / (1 - cfg.beta2**st.t)
    return w - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


_STEPS = {"sgd": sgd_step, "rmsprop": rmsprop_step, "adam": adam_step}


def step(w, g, st, cfg):
    return _STEPS[cfg.kind](w, g, st, cfg)


@dataclass(frozen=True)
class LrSchedule:
    """``constant``, ``halving`` (base * 0.5**(epoch-1)) or ``milestones``."""

    policy: str = "constant"
    milestones: tuple = field(default_factory=tuple)
    gamma: float = 0.1

    def __post_init__(self):
        if self.policy not in ("constant", "halving", "milestones"):
            raise ValueError(f"unknown schedule {self.policy!r}")


def schedule_lr(epoch, policy, base):
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    if isinstance(policy, str):
        policy = LrSchedule(policy)
    if policy.policy == "halving":
        return base * 0.5 ** (epoch - 1)
    if policy.policy == "milestones":
        passed = sum(1 for m in policy.milestones if epoch >= m)
        return base * policy.gamma**passed
    return base
