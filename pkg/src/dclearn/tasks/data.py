"""Synthetic Gaussian-cluster data and permuted / rotated task streams."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BlobsDataset:
    inputs: np.ndarray
    labels: np.ndarray
    c: int
    means: np.ndarray
    seed: int

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.c:
            raise ValueError("labels outside [0, c)")

    @property
    def d(self):
        return self.inputs.shape[1]

    def __len__(self):
        return self.labels.shape[0]


def blob_means(c, d, separation, rng):
    """Orthonormal directions when c <= d, random unit vectors otherwise."""
    if c <= d:
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        dirs = Q[:, :c].T
    else:
        dirs = rng.standard_normal((c, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation * dirs


def sample_blobs(means, n_per_class, rng):
    c, d = means.shape
    y = np.repeat(np.arange(c), n_per_class)
    X = means[y] + rng.standard_normal((y.shape[0], d))
    order = rng.permutation(y.shape[0])
    return X[order], y[order]


def gen_blobs(c, n_per_class, d, separation, seed):
    """Unit-covariance clusters at seeded random means."""
    if c < 2 or d < 2:
        raise ValueError("need c >= 2 and d >= 2")
    if n_per_class < 1:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    means = blob_means(c, d, separation, rng)
    X, y = sample_blobs(means, n_per_class, rng)
    return BlobsDataset(X, y, c, means, seed)


def gen_blobs_split(c, n_train, n_test, d, separation, seed):
    """Train and test sets drawn from the same clusters (per-class counts)."""
    rng = np.random.default_rng(seed)
    if c < 2 or d < 2:
        raise ValueError("need c >= 2 and d >= 2")
    means = blob_means(c, d, separation, rng)
    train = BlobsDataset(*sample_blobs(means, n_train, rng), c, means, seed)
    test = BlobsDataset(*sample_blobs(means, n_test, rng), c, means, seed)
    return train, test


@dataclass(frozen=True)
class Transform:
    kind: str  # identity, permute or rotate
    perm: np.ndarray = None
    matrix: np.ndarray = None
    angle: float = 0.0

    def apply(self, X):
        if self.kind == "permute":
            return X[:, self.perm]
        if self.kind == "rotate":
            return X @ self.matrix.T
        return X.copy()

    def invert(self, X):
        if self.kind == "permute":
            out = np.empty_like(X)
            out[:, self.perm] = X
            return out
        if self.kind == "rotate":
            return X @ self.matrix
        return X.copy()

    def describe(self):
        if self.kind == "permute":
            return {"kind": "permute", "perm": [int(i) for i in self.perm]}
        if self.kind == "rotate":
            return {"kind": "rotate", "angle": float(self.angle)}
        return {"kind": "identity"}


def rotation_matrix(d, angle, basis=None):
    """Rotate by ``angle`` in each plane spanned by consecutive basis pairs.

    With d = 2 and no basis this is the ordinary planar rotation. For odd d
    the last basis direction is left fixed.
    """
    B = np.eye(d) if basis is None else basis
    c, s = np.cos(angle), np.sin(angle)
    R = np.eye(d)
    for i in range(0, d - 1, 2):
        R[i : i + 2, i : i + 2] = [[c, -s], [s, c]]
    return B @ R @ B.T


@dataclass(frozen=True)
class Task:
    train: BlobsDataset
    test: BlobsDataset
    transform: Transform


@dataclass(frozen=True)
class TaskStream:
    kind: str
    tasks: tuple

    def __len__(self):
        return len(self.tasks)


def _transformed(ds, tr):
    return BlobsDataset(tr.apply(ds.inputs), ds.labels.copy(), ds.c, ds.means, ds.seed)


def gen_stream(kind, T, base, seed, n_train=None, n_test=None, angles=None):
    """``T`` tasks over the clusters of ``base``; task 1 trains on ``base`` itself.

    Tasks 2..T draw their own training samples (``n_train`` per class,
    default: the base size) and every task draws a test set (``n_test`` per
    class); then the task's transform is applied. Rotation angles are
    uniform in [0, pi) unless given; ``angles[0]`` must be 0.
    """
    if kind not in ("permute", "rotate"):
        raise ValueError(f"unknown stream kind {kind!r}")
    if T < 1:
        raise ValueError("need at least one task")
    if angles is not None and (len(angles) != T or angles[0] != 0.0):
        raise ValueError("need one angle per task, starting with 0")
    d, c = base.d, base.c
    per_class = max(1, len(base) // c)
    n_train = per_class if n_train is None else n_train
    n_test = per_class if n_test is None else n_test
    rng = np.random.default_rng(seed)
    basis = None
    if kind == "rotate" and d > 2:
        basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    tasks = []
    for k in range(T):
        if k == 0:
            tr = Transform("identity")
        elif kind == "permute":
            tr = Transform("permute", perm=rng.permutation(d))
        else:
            a = float(rng.uniform(0.0, np.pi)) if angles is None else float(angles[k])
            tr = Transform("rotate", matrix=rotation_matrix(d, a, basis), angle=a)
        if k == 0:
            train = base
        else:
            Xtr, ytr = sample_blobs(base.means, n_train, rng)
            train = _transformed(BlobsDataset(Xtr, ytr, c, base.means, base.seed), tr)
        Xte, yte = sample_blobs(base.means, n_test, rng)
        test = _transformed(BlobsDataset(Xte, yte, c, base.means, base.seed), tr)
        tasks.append(Task(train, test, tr))
    return TaskStream(kind, tuple(tasks))
