"""Analytic 2D test functions and optimizer runs on them."""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .. import optim
from ..analysis import TraceRecord, TrainTrace
from ..dcl import DclState, dcl_apply

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class Bench2dProblem:
    """``fn(x, y) -> (z, (dz/dx, dz/dy))`` plus a start point."""

    name: str
    fn: object = field(compare=False)
    start: tuple
    params: dict = field(default_factory=dict, compare=False)
    search_box: tuple = (-3.0, 3.0)

    @cached_property
    def minima(self):
        return locate_minima(self)


def two_minimum(x, y):
    e1 = math.exp(-((x - 1) ** 2 + (y - 1) ** 2) / 0.5)
    e2 = math.exp(-((x + 1) ** 2 + (y + 1) ** 2) / 0.5)
    z = 0.1 * (x * x + y * y) - 3 * e1 - 2 * e2
    gx = 0.2 * x + 12 * e1 * (x - 1) + 8 * e2 * (x + 1)
    gy = 0.2 * y + 12 * e1 * (y - 1) + 8 * e2 * (y + 1)
    return z, (gx, gy)


def default_problem(start=(0.3, -1.8)):
    """Shallow bowl with two Gaussian wells near (1, 1) and (-1, -1)."""
    return Bench2dProblem("two-minimum", two_minimum, tuple(start))


def quadratic_problem(a=1.0, b=10.0, start=(2.0, 1.0)):
    """f = (a x^2 + b y^2) / 2; Lipschitz constant max(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("curvatures must be positive")

    def fn(x, y):
        return 0.5 * (a * x * x + b * y * y), (a * x, b * y)

    return Bench2dProblem("quadratic", fn, tuple(start), {"a": a, "b": b, "lipschitz": max(a, b)})


PROBLEMS = {"two-minimum": default_problem, "quadratic": quadratic_problem}


def bench2d_eval(p, x, y):
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("non-finite point")
    z, (gx, gy) = p.fn(float(x), float(y))
    return z, np.array([gx, gy], dtype=np.float64)


def locate_minima(p, grid=61, tol=1e-10):
    """Grid search for local minima, then Newton refinement on each.

    The Hessian is a central difference of the analytic gradient.
    """
    lo, hi = p.search_box
    xs = np.linspace(lo, hi, grid)
    Z = np.array([[bench2d_eval(p, x, y)[0] for y in xs] for x in xs])
    found = []
    for i in range(1, grid - 1):
        for j in range(1, grid - 1):
            if Z[i, j] < Z[i - 1 : i + 2, j - 1 : j + 2].flatten()[[0, 1, 2, 3, 5, 6, 7, 8]].min():
                w = _refine(p, np.array([xs[i], xs[j]]), tol)
                if w is not None and not any(np.linalg.norm(w - f) < 1e-6 for f in found):
                    found.append(w)
    return tuple(tuple(float(v) for v in w) for w in sorted(found, key=lambda w: bench2d_eval(p, *w)[0]))


def _refine(p, w, tol, h=1e-6):
    for _ in range(100):
        _, g = bench2d_eval(p, *w)
        if np.linalg.norm(g) < tol:
            return w
        H = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            H[:, k] = (bench2d_eval(p, *(w + e))[1] - bench2d_eval(p, *(w - e))[1]) / (2 * h)
        H = 0.5 * (H + H.T)
        if np.min(np.linalg.eigvalsh(H)) <= 0:
            return None
        w = w - np.linalg.solve(H, g)
    _, g = bench2d_eval(p, *w)
    return w if np.linalg.norm(g) < tol else None


def run_bench2d(p, opt_cfg, dcl_cfg=None, iters=200, grad_tol=0.0):
    """Optimize from ``p.start``; w = (x, y) is the tracked vector.

    The run stops early once |grad f| < grad_tol (the converged point is not
    recorded as a step). A run whose iterate leaves the ball of radius 1e6 is
    truncated and flagged ``diverged``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    w = np.array(p.start, dtype=np.float64)
    st = optim.OptimizerState.like(w)
    dst = DclState()
    trace = TrainTrace()
    for t in range(iters):
        z, g = bench2d_eval(p, *w)
        if grad_tol > 0 and np.linalg.norm(g) < grad_tol:
            break
        gt = dcl_apply(g, w, dst, dcl_cfg) if dcl_cfg is not None else g
        corrected = dcl_cfg is not None and dst.corrected_last
        trace.append(TraceRecord(t, 1, w.copy(), g, gt, float(z), opt_cfg.lr, corrected))
        w = optim.step(w, gt, st, opt_cfg)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > DIVERGENCE_NORM:
            trace.diverged = True
            break
    trace.final_w = w
    return trace


def final_state(p, trace):
    """(final z, final |grad|) at the point the run ended on."""
    if trace.diverged:
        return math.nan, math.nan
    z, g = bench2d_eval(p, *trace.final_w)
    return float(z), float(np.linalg.norm(g))
