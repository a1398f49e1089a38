"""Non-negative dual QP and the gradient correction built on it.

The correction problem

    minimize 1/2 ||gt - g||^2   s.t.  A gt <= 0

is solved through its dual over the multipliers v >= 0,

    minimize 1/2 v'Hv + q'v,   H = A A',  q = -A g,

after which gt = g - A'v. The dual lives in R^{N_c} with N_c the number of
constraint rows, which is tiny compared to the gradient length.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import EPS_FEAS, DimensionError, NumericError, as_mat, as_vec, gram

DEFAULT_TOL = 1e-12
DEFAULT_MAX_SWEEPS = 10_000


class SolverWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class NnqpProblem:
    H: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        H = as_mat(self.H, name="H")
        q = as_vec(self.q, name="q")
        n = q.shape[0]
        if n < 1 or H.shape != (n, n):
            raise DimensionError(f"H has shape {H.shape}, q has length {n}")
        if np.max(np.abs(H - H.T)) > 1e-10 * max(1.0, np.max(np.abs(H))):
            raise ValueError("H is not symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "q", q)

    def objective(self, v):
        return 0.5 * float(v @ self.H @ v) + float(self.q @ v)


@dataclass(frozen=True)
class NnqpSolution:
    v: np.ndarray
    iterations: int
    converged: bool


def _stationarity(H, q, v, live):
    r = H @ v + q
    return np.max(np.abs(np.minimum(v, r))[live], initial=0.0)


def _certified(H, q, v, live, tol, scale):
    # Hv + q cannot be evaluated more accurately than about eps * |H| |v|,
    # so the threshold grows with the size of the terms being cancelled
    mag = max(scale, float(np.max(np.abs(H), initial=0.0) * np.max(np.abs(v), initial=0.0)))
    return _stationarity(H, q, v, live) <= tol * mag


def _support_solve(H, q, S):
    # least squares handles singular H_SS (duplicate reference rows) without a ridge
    # two refinement passes bring the residual down to roughly eps * |H| |x|
    x = np.zeros_like(q)
    if S.any():
        Hs, qs = H[np.ix_(S, S)], q[S]
        xs = np.linalg.lstsq(Hs, -qs, rcond=None)[0]
        for _ in range(2):
            xs = xs + np.linalg.lstsq(Hs, -(Hs @ xs + qs), rcond=None)[0]
        x[S] = xs
    return x


def _polish(H, q, v, live, tol, scale):
    """Active-set finish warm-started from the coordinate-descent iterate.

    Lawson-Hanson style: solve on the support, step back to feasibility when a
    component goes negative, otherwise add the most violated inactive row.
    Returns None if it cannot certify a KKT point within a few passes.
    """
    n = q.shape[0]
    S = live & (v > 0)
    x = np.where(S, v, 0.0)
    try:
        for _ in range(3 * n + 3):
            z = _support_solve(H, q, S)
            if not np.all(np.isfinite(z)):
                return None
            neg = S & (z <= 0)
            if neg.any():
                ratios = x[neg] / (x[neg] - z[neg])
                alpha = float(np.min(ratios))
                x = x + alpha * (z - x)
                S = S & (x > 1e-15 * max(1.0, np.max(x, initial=0.0)))
                x = np.where(S, x, 0.0)
                continue
            x = z
            r = H @ x + q
            cand = ~S & live
            if not cand.any() or np.min(r[cand]) >= -tol * scale:
                break
            j = np.flatnonzero(cand)[np.argmin(r[cand])]
            S[j] = True
    except np.linalg.LinAlgError:
        return None
    if np.any(x < 0):
        return None
    return x if _certified(H, q, x, live, tol, scale) else None


def solve_nnqp(p, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS):
    """Minimize 1/2 v'Hv + q'v over v >= 0 by cyclic projected coordinate descent.

    The stopping test is |min(v_i, (Hv+q)_i)| <= tol * scale for every row with a
    positive diagonal, where scale = max(1, |q|_inf, |H|_inf |v|_inf) keeps the
    test meaningful for large gradients and ill-conditioned H. Rows with
    H_ii = 0 are zero constraints; their multiplier stays at 0. After each sweep the support found so far is solved
    exactly; that finishes well-conditioned problems in a handful of sweeps.
    """
    H, q = p.H, p.q
    n = q.shape[0]
    if np.all(q >= 0):
        return NnqpSolution(np.zeros(n), 0, True)

    diag = np.diag(H)
    live = diag > 0
    scale = max(1.0, float(np.max(np.abs(q))))

    v = np.zeros(n)
    r = q.copy()  # r = H v + q, maintained incrementally
    idx = np.flatnonzero(live)
    for sweep in range(1, max_sweeps + 1):
        for i in idx:
            new = max(0.0, v[i] - r[i] / diag[i])
            d = new - v[i]
            if d != 0.0:
                r += d * H[:, i]
                v[i] = new
        r = H @ v + q
        if _certified(H, q, v, live, tol, scale):
            return NnqpSolution(v, sweep, True)
        cand = _polish(H, q, v, live, tol, scale)
        if cand is not None:
            return NnqpSolution(cand, sweep, True)
    return NnqpSolution(v, max_sweeps, False)


class Correction(NamedTuple):
    g_tilde: np.ndarray
    v: np.ndarray
    converged: bool


def correct_gradient(g, A, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS):
    """Closest vector to ``g`` satisfying ``A @ g_tilde <= 0``.

    If ``A @ g <= 0`` already, ``g`` is returned unchanged with v = 0. On solver
    failure the raw gradient is returned with ``converged=False`` and a
    SolverWarning is emitted.
    """
    g = as_vec(g, name="g")
    A = as_mat(A, cols=g.shape[0], name="A")
    nc = A.shape[0]
    if nc == 0:
        return Correction(g.copy(), np.zeros(0), True)
    Ag = A @ g
    if np.all(Ag <= 0):
        return Correction(g.copy(), np.zeros(nc), True)
    sol = solve_nnqp(NnqpProblem(gram(A), -Ag), tol=tol, max_sweeps=max_sweeps)
    if not sol.converged:
        warnings.warn("dual QP did not converge; using the raw gradient", SolverWarning)
        return Correction(g.copy(), np.zeros(nc), False)
    g_tilde = g - A.T @ sol.v
    if not np.all(np.isfinite(g_tilde)):
        raise NumericError("corrected gradient is not finite")
    return Correction(g_tilde, sol.v, True)


def kkt_residual(g, A, g_tilde, v):
    """Largest violation of stationarity, feasibility and complementarity."""
    g = as_vec(g, name="g")
    g_tilde = as_vec(g_tilde, name="g_tilde")
    A = as_mat(A, cols=g.shape[0], name="A")
    v = as_vec(v, name="v") if np.size(v) else np.zeros(0)
    if g_tilde.shape != g.shape or v.shape[0] != A.shape[0]:
        raise DimensionError("inconsistent shapes in kkt_residual")
    stat = float(np.max(np.abs(g_tilde - g + A.T @ v), initial=0.0))
    if A.shape[0] == 0:
        return stat
    Agt = A @ g_tilde
    primal = float(max(np.max(Agt), 0.0))
    dual = float(max(np.max(-v), 0.0))
    comp = float(np.max(np.abs(v * Agt)))
    return max(stat, primal, dual, comp)


def is_feasible(A, g_tilde, tol=EPS_FEAS):
    A = np.asarray(A, dtype=np.float64)
    return A.shape[0] == 0 or bool(np.all(A @ g_tilde <= tol))
