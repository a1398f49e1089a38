"""Small dense linear-algebra helpers shared by the rest of the package.

Vectors and matrices are plain float64 numpy arrays. A matrix with zero rows
is a legal value and means "no constraints".
"""

import numpy as np

EPS_ZERO = 1e-12
EPS_FEAS = 1e-8


class DimensionError(ValueError):
    pass


class DegenerateInputError(ValueError):
    """Raised when a quantity is undefined for (near) zero vectors."""


class NumericError(ArithmeticError):
    pass


def as_vec(a, name="vector"):
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} has non-finite entries")
    return v


def as_mat(a, cols=None, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1 and m.size == 0:
        m = m.reshape(0, cols or 0)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if cols is not None and m.shape[0] > 0 and m.shape[1] != cols:
        raise DimensionError(f"{name} rows have length {m.shape[1]}, expected {cols}")
    if m.shape[0] == 0 and cols is not None:
        m = m.reshape(0, cols)
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} has non-finite entries")
    return m


def empty_rows(p):
    return np.zeros((0, p))


def dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"dot of shapes {a.shape} and {b.shape}")
    return float(a @ b)


def norm(a):
    return float(np.sqrt(dot(a, a)))


def cosine_sim(a, b, eps=EPS_ZERO):
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1].

    Raises DegenerateInputError when either vector has norm <= eps; callers
    decide whether that becomes a missing value or an error.
    """
    ab = dot(a, b)
    aa, bb = dot(a, a), dot(b, b)
    if aa <= eps * eps or bb <= eps * eps:
        raise DegenerateInputError("cosine similarity of a near-zero vector")
    # sqrt(aa * bb) rather than |a||b| so that parallel inputs give exactly +-1
    denom = np.sqrt(aa * bb)
    if not np.isfinite(denom) or denom == 0.0:
        denom = np.sqrt(aa) * np.sqrt(bb)
    c = ab / denom
    return min(1.0, max(-1.0, float(c)))


def cosine_or_none(a, b, eps=EPS_ZERO):
    try:
        return cosine_sim(a, b, eps)
    except DegenerateInputError:
        return None


def gram(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"gram expects a matrix, got shape {A.shape}")
    H = A @ A.T
    # exact symmetry; A @ A.T can differ in the last bit across the diagonal
    return 0.5 * (H + H.T)
