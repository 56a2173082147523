"""Synthetic data, Dirichlet partitioning and the two local learners.

The classification learner is multinomial logistic regression with the
parameters flattened from a ``(dim + 1, classes)`` matrix whose last row is
the bias. The quadratic learner minimizes ``0.5 w'Aw - b'w`` with noisy
gradients and exists for convergence checks against a closed-form optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ModelParams, ViolationError, as_params


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ViolationError("features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ViolationError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ViolationError(f"labels must lie in [0, {self.classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.classes)


@dataclass(frozen=True)
class SgdHyper:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 50
    local_epochs: int = 5

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ViolationError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ViolationError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ViolationError("batch_size and local_epochs must be >= 1")

    def steps_per_round(self, shard_size: int) -> int:
        return self.local_epochs * math.ceil(shard_size / self.batch_size)


# ---------------------------------------------------------------- data


def gen_synthetic(classes: int, dim: int, total: int, separation: float, rng: np.random.Generator) -> Dataset:
    """Gaussian clusters with unit covariance around random class means.

    Class means are random unit directions scaled by ``separation``; labels
    are balanced to within one sample and shuffled.
    """
    if classes < 2 or dim < 2 or total < classes:
        raise ViolationError(f"need classes >= 2, dim >= 2, total >= classes; got {classes}, {dim}, {total}")
    means = rng.standard_normal((classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.arange(total) % classes
    rng.shuffle(labels)
    features = means[labels] + rng.standard_normal((total, dim))
    return Dataset(features, labels.astype(np.int64), classes)


def split_train_test(ds: Dataset, test_fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    perm = rng.permutation(ds.n)
    n_test = int(round(ds.n * test_fraction))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def dirichlet_partition(ds: Dataset, parts: int, alpha: float, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices into ``parts`` disjoint non-empty shards, class by class.

    Per class, shard proportions are drawn from ``Dir(alpha)``. Empty shards
    are repaired by moving one sample over from the current largest shard.
    """
    if parts < 1:
        raise ViolationError("parts must be >= 1")
    if not alpha > 0:
        raise ViolationError("alpha must be > 0")
    if parts > ds.n:
        raise ViolationError(f"cannot split {ds.n} samples into {parts} non-empty shards")
    shards: list[list[int]] = [[] for _ in range(parts)]
    for c in range(ds.classes):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(parts, alpha))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
        for k, chunk in enumerate(np.split(idx, cuts)):
            shards[k].extend(chunk.tolist())
    for k in range(parts):
        if not shards[k]:
            donor = max(range(parts), key=lambda j: (len(shards[j]), -j))
            shards[k].append(shards[donor].pop())
    return [np.sort(np.asarray(s, dtype=np.int64)) for s in shards]


def grouped_dirichlet_partition(
    ds: Dataset,
    group_sizes: Sequence[int],
    group_alpha: float,
    alpha: float,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Two-level split: ``Dir(group_alpha)`` across groups, then ``Dir(alpha)`` inside each group.

    Groups model data centers whose populations differ. Shards come back in
    group order, ``group_sizes[g]`` of them per group. A group left with
    fewer samples than shards borrows from the largest group.
    """
    sizes = [int(s) for s in group_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise ViolationError("every group needs at least one shard")
    if sum(sizes) > ds.n:
        raise ViolationError(f"cannot split {ds.n} samples into {sum(sizes)} non-empty shards")
    groups = [list(g) for g in dirichlet_partition(ds, len(sizes), group_alpha, rng)]
    for g, need in enumerate(sizes):
        while len(groups[g]) < need:
            donor = max(range(len(groups)), key=lambda j: (len(groups[j]) - sizes[j], -j))
            groups[g].append(groups[donor].pop())
    out = []
    for g, need in enumerate(sizes):
        idx = np.sort(np.asarray(groups[g], dtype=np.int64))
        out.extend(idx[s] for s in dirichlet_partition(ds.subset(idx), need, alpha, rng))
    return out


def load_matrix(path: str | Path, classes: int | None = None) -> Dataset:
    """Load a dataset whose rows are ``features..., label``.

    ``.npy`` files hold a 2-D float array; anything else is parsed as
    comma- or whitespace-delimited text (``#`` starts a comment).
    """
    path = Path(path)
    if path.suffix == ".npy":
        mat = np.load(path)
    else:
        text = path.read_text()
        delim = "," if "," in text else None
        mat = np.loadtxt(path, delimiter=delim, ndmin=2)
    if mat.ndim != 2 or mat.shape[1] < 2:
        raise ViolationError(f"{path}: expected a matrix with at least two columns")
    labels = mat[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ViolationError(f"{path}: label column must hold integers")
    labels = labels.astype(np.int64)
    n_classes = int(labels.max()) + 1 if classes is None else classes
    return Dataset(np.ascontiguousarray(mat[:, :-1], dtype=np.float64), labels, n_classes)


# ---------------------------------------------------------------- softmax regression


def softmax_param_count(dim: int, classes: int) -> int:
    return (dim + 1) * classes


def _unflatten(params: ModelParams, dim: int, classes: int) -> np.ndarray:
    if params.shape != (softmax_param_count(dim, classes),):
        raise ViolationError(
            f"expected {softmax_param_count(dim, classes)} parameters, got {params.shape}"
        )
    return params.reshape(dim + 1, classes)


def _logits(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ W[:-1] + W[-1]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_loss(params: ModelParams, X: np.ndarray, y: np.ndarray, classes: int) -> float:
    W = _unflatten(params, X.shape[1], classes)
    lp = _log_softmax(_logits(W, X))
    return float(-lp[np.arange(y.size), y].mean())


def softmax_grad(params: ModelParams, X: np.ndarray, y: np.ndarray, classes: int) -> np.ndarray:
    """Gradient of mean cross-entropy, flattened like ``params``."""
    W = _unflatten(params, X.shape[1], classes)
    p = np.exp(_log_softmax(_logits(W, X)))
    p[np.arange(y.size), y] -= 1.0
    p /= y.size
    g = np.empty_like(W)
    g[:-1] = X.T @ p
    g[-1] = p.sum(axis=0)
    return g.reshape(-1)


def local_train(params: ModelParams, shard: Dataset, hyper: SgdHyper, rng: np.random.Generator) -> ModelParams:
    """Mini-batch SGD with momentum on one shard; a fresh momentum buffer per call."""
    if shard.n == 0:
        raise ViolationError("cannot train on an empty shard")
    w = np.array(_unflatten(params, shard.dim, shard.classes), dtype=np.float64).reshape(-1)
    vel = np.zeros_like(w)
    X, y = shard.features, shard.labels
    for _ in range(hyper.local_epochs):
        order = rng.permutation(shard.n)
        for start in range(0, shard.n, hyper.batch_size):
            b = order[start:start + hyper.batch_size]
            g = softmax_grad(w, X[b], y[b], shard.classes)
            vel = hyper.momentum * vel + g
            w -= hyper.learning_rate * vel
    return as_params(w)


def evaluate(params: ModelParams, test: Dataset) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy; ties in the logits go to the lowest class."""
    if test.n == 0:
        raise ViolationError("empty test set")
    W = _unflatten(params, test.dim, test.classes)
    z = _logits(W, test.features)
    acc = float(np.mean(np.argmax(z, axis=1) == test.labels))
    lp = _log_softmax(z)
    return acc, float(-lp[np.arange(test.n), test.labels].mean())


# ---------------------------------------------------------------- quadratic task


@dataclass(frozen=True)
class QuadProblem:
    A: np.ndarray
    b: np.ndarray
    noise: float = 0.0

    def value(self, w) -> float:
        w = np.asarray(w)
        return float(0.5 * w @ self.A @ w - self.b @ w)

    def grad(self, w) -> np.ndarray:
        return self.A @ np.asarray(w) - self.b


def random_quad_problem(dim: int, mu: float, L: float, noise: float, rng: np.random.Generator,
                        b_scale: float = 1.0, center=None) -> QuadProblem:
    """SPD quadratic with eigenvalues spanning exactly ``[mu, L]``.

    ``b = A c + b_scale * xi`` with ``xi ~ N(0, I)``, so the local optimum sits
    near ``c`` (the origin by default) and ``b_scale`` sets how far problems
    sharing ``c`` disagree.
    """
    if not 0 < mu <= L:
        raise ViolationError("need 0 < mu <= L")
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = np.sort(rng.uniform(mu, L, dim))
    eig[0], eig[-1] = mu, L
    A = (q * eig) @ q.T
    A = 0.5 * (A + A.T)
    b = b_scale * rng.standard_normal(dim)
    if center is not None:
        b = b + A @ np.asarray(center, dtype=np.float64)
    return QuadProblem(A, b, noise)


def inverse_time_lr(mu: float, L: float, steps_per_round: int):
    """Step size ``2 / (mu (t + gamma))`` with ``gamma = max(8L/mu, E) - 1``."""
    gamma = max(8 * L / mu, steps_per_round) - 1
    return lambda t: 2.0 / (mu * (t + gamma))


def quad_train(params: ModelParams, problem: QuadProblem, hyper: SgdHyper, rng: np.random.Generator,
               steps: int | None = None, start_iter: int = 0, lr_schedule=None) -> ModelParams:
    """Noisy gradient steps on one quadratic.

    Noise is zero-mean Gaussian with total variance ``problem.noise ** 2``
    (spread evenly over coordinates). ``lr_schedule(t)`` overrides the
    constant learning rate, where ``t`` counts iterations across rounds.
    """
    w = np.array(params, dtype=np.float64)
    if w.shape != problem.b.shape:
        raise ViolationError(f"expected {problem.b.shape[0]} parameters, got {w.shape}")
    n_steps = hyper.local_epochs if steps is None else steps
    sd = problem.noise / math.sqrt(w.size)
    vel = np.zeros_like(w)
    for s in range(n_steps):
        g = problem.grad(w)
        if sd > 0:
            g = g + sd * rng.standard_normal(w.size)
        lr = hyper.learning_rate if lr_schedule is None else lr_schedule(start_iter + s)
        vel = hyper.momentum * vel + g
        w -= lr * vel
    return as_params(w)


def closed_form_optimum(problems: Sequence[QuadProblem]) -> ModelParams:
    """Minimizer of the uniform average of the problems: ``(sum A)^-1 sum b``."""
    if not problems:
        raise ViolationError("need at least one problem")
    A = sum(p.A for p in problems)
    b = sum(p.b for p in problems)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise ViolationError("sum of curvature matrices is singular")
    return as_params(np.linalg.solve(A, b))


def quad_objective(params, problems: Sequence[QuadProblem]) -> float:
    return math.fsum(p.value(params) for p in problems) / len(problems)


# ---------------------------------------------------------------- tasks used by the engine


class SoftmaxTask:
    """Classification workload: one shard per container plus a global test set."""

    kind = "softmax"

    def __init__(self, shards: Sequence[Dataset], test: Dataset, hyper: SgdHyper):
        self.shards = list(shards)
        self.test = test
        self.hyper = hyper
        self.dim = softmax_param_count(test.dim, test.classes)

    def init_params(self) -> ModelParams:
        return as_params(np.zeros(self.dim))

    def shard_size(self, k: int) -> int:
        return self.shards[k].n

    def train(self, params, k: int, rng: np.random.Generator, start_iter: int = 0) -> ModelParams:
        return local_train(params, self.shards[k], self.hyper, rng)

    def iterations(self, k: int) -> int:
        return self.hyper.steps_per_round(self.shard_size(k))

    def evaluate(self, params) -> tuple[float, float]:
        return evaluate(params, self.test)


class QuadTask:
    """Strongly convex workload; ``loss`` reports the average objective."""

    kind = "quadratic"

    def __init__(self, problems: Sequence[QuadProblem], samples: Sequence[int], hyper: SgdHyper,
                 lr_schedule: str = "constant", mu: float | None = None, L: float | None = None):
        self.problems = list(problems)
        self.samples = list(samples)
        self.hyper = hyper
        self.dim = self.problems[0].b.shape[0]
        self.optimum = closed_form_optimum(self.problems)
        self.f_star = quad_objective(self.optimum, self.problems)
        self._schedule = None
        if lr_schedule == "inverse":
            E = max(self.iterations(k) for k in range(len(self.problems)))
            self._schedule = inverse_time_lr(mu, L, E)
        elif lr_schedule != "constant":
            raise ViolationError(f"unknown lr schedule {lr_schedule!r}")

    def init_params(self) -> ModelParams:
        return as_params(np.zeros(self.dim))

    def shard_size(self, k: int) -> int:
        return self.samples[k]

    def iterations(self, k: int) -> int:
        return self.hyper.steps_per_round(self.samples[k])

    def train(self, params, k: int, rng: np.random.Generator, start_iter: int = 0) -> ModelParams:
        return quad_train(params, self.problems[k], self.hyper, rng, steps=self.iterations(k),
                          start_iter=start_iter, lr_schedule=self._schedule)

    def evaluate(self, params) -> tuple[float, float]:
        # accuracy is undefined for a regression objective
        return float("nan"), quad_objective(params, self.problems)
