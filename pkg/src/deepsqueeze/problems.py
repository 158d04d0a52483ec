"""Local objectives, data ingestion and measured problem constants.

The global objective is the node average ``f(x) = (1/n) sum_i f_i(x)`` with

* quadratic: ``f_i(x) = ||A_i x - b_i||^2 / (2 m_i)``
* logistic:  ``f_i(x) = mean log(1 + exp(-y a^T x)) + (l2_reg / 2) ||x||^2``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from . import rng as rngmod
from .errors import ParameterError, ParseError

__all__ = [
    "ProblemKind",
    "Dataset",
    "ProblemSpec",
    "ProblemConstants",
    "load_libsvm",
    "partition",
    "synth_quadratic",
    "synth_two_class",
    "logistic_from_dataset",
    "quadratic_from_dataset",
    "grad_stochastic",
    "constants",
]


class ProblemKind(str, Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    kind: ProblemKind
    A: tuple
    b: tuple
    l2_reg: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProblemKind(self.kind))
        A = tuple(np.array(a, dtype=float) for a in self.A)
        b = tuple(np.array(v, dtype=float) for v in self.b)
        if not A or len(A) != len(b):
            raise ParameterError("need one (A_i, b_i) pair per node")
        d = A[0].shape[1]
        for a, v in zip(A, b):
            if a.ndim != 2 or a.shape[1] != d or a.shape[0] < 1 or v.shape != (a.shape[0],):
                raise ParameterError("every node needs m_i >= 1 rows of a common dimension")
            a.setflags(write=False)
            v.setflags(write=False)
        if self.kind is ProblemKind.LOGISTIC and not all(np.all(np.isin(v, (-1.0, 1.0))) for v in b):
            raise ParameterError("logistic labels must be -1 or +1")
        if self.l2_reg < 0 or self.noise_sigma < 0:
            raise ParameterError("l2_reg and noise_sigma must be nonnegative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_nodes(self) -> int:
        return len(self.A)

    @property
    def dim(self) -> int:
        return self.A[0].shape[1]

    def m(self, node: int) -> int:
        return self.A[node].shape[0]

    # -- exact local quantities

    def _rows_grad(self, node, x, rows):
        a = self.A[node][rows]
        b = self.b[node][rows]
        if self.kind is ProblemKind.QUADRATIC:
            return a.T @ (a @ x - b) / len(b)
        margin = b * (a @ x)
        return -(a.T @ (b * expit(-margin))) / len(b) + self.l2_reg * x

    def local_loss(self, node: int, x) -> float:
        a, b = self.A[node], self.b[node]
        if self.kind is ProblemKind.QUADRATIC:
            r = a @ x - b
            return float(r @ r) / (2 * len(b))
        return float(np.mean(np.logaddexp(0.0, -b * (a @ x))) + 0.5 * self.l2_reg * (x @ x))

    def local_grad(self, node: int, x) -> np.ndarray:
        return self._rows_grad(node, np.asarray(x, dtype=float), slice(None))

    def loss(self, x) -> float:
        return float(np.mean([self.local_loss(i, x) for i in range(self.n_nodes)]))

    def grad(self, x) -> np.ndarray:
        return np.mean([self.local_grad(i, x) for i in range(self.n_nodes)], axis=0)

    def local_grads(self, x) -> np.ndarray:
        """Stacked exact local gradients at a common point, shape (n, d)."""
        return np.array([self.local_grad(i, x) for i in range(self.n_nodes)])

    def sample_grads(self, node: int, x) -> np.ndarray:
        """Per-sample gradients of node ``node`` at ``x``, shape (m_i, d)."""
        a, b = self.A[node], self.b[node]
        if self.kind is ProblemKind.QUADRATIC:
            return a * (a @ x - b)[:, None]
        return -a * (b * expit(-b * (a @ x)))[:, None] + self.l2_reg * x

    def is_deterministic(self, batch_size: int | None) -> bool:
        full = batch_size is None or all(batch_size >= self.m(i) for i in range(self.n_nodes))
        return full and self.noise_sigma == 0.0


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    sigma2_hat: float
    zeta2_hat: float
    x_star: np.ndarray | None = field(default=None, compare=False)
    f_star: float | None = None

    def to_dict(self):
        return {
            "L": self.L,
            "sigma2_hat": self.sigma2_hat,
            "zeta2_hat": self.zeta2_hat,
            "f_star": self.f_star,
            "x_star": None if self.x_star is None else [float(v) for v in self.x_star],
        }


# ---------------------------------------------------------------- data

def load_libsvm(path, n_features: int | None = None) -> Dataset:
    labels = []
    rows = []
    dim = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
            entries = {}
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(f"malformed token {tok!r}", lineno)
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise ParseError(f"malformed token {tok!r}", lineno) from None
                if j < 1:
                    raise ParseError(f"feature index {j} is not 1-based", lineno)
                entries[j - 1] = v
                dim = max(dim, j)
            labels.append(label)
            rows.append(entries)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if n_features is not None:
        dim = max(dim, n_features)
    X = np.zeros((len(rows), dim))
    for r, entries in enumerate(rows):
        for j, v in entries.items():
            X[r, j] = v
    return Dataset(X, np.array(labels))


def partition(dataset_or_labels, n_nodes: int, strategy: str = "shuffled", seed: int = 0) -> list[np.ndarray]:
    """Balanced split of row indices into ``n_nodes`` groups.

    ``shuffled`` draws a uniform permutation; ``label_sorted`` splits the
    label-sorted rows contiguously so each node sees few classes.
    """
    labels = getattr(dataset_or_labels, "labels", dataset_or_labels)
    labels = np.asarray(labels)
    rows = labels.shape[0]
    if n_nodes < 1 or n_nodes > rows:
        raise ParameterError(f"cannot split {rows} rows across {n_nodes} nodes")
    if strategy == "shuffled":
        order = rngmod.stream(seed, rngmod.DATA, 1).permutation(rows)
    elif strategy == "label_sorted":
        order = np.argsort(labels, kind="stable")
    else:
        raise ParameterError(f"unknown partition strategy {strategy!r}")
    return [np.sort(part) for part in np.array_split(order, n_nodes)]


def synth_quadratic(n_nodes, d, m_per_node, heterogeneity=0.0, seed=0, noise_sigma=0.0) -> ProblemSpec:
    """Least squares with node optima ``x0 + h * u_i`` (``u_i`` unit norm)."""
    if n_nodes < 1 or d < 1 or m_per_node < 1 or heterogeneity < 0:
        raise ParameterError("synth_quadratic needs positive sizes and h >= 0")
    g = rngmod.stream(seed, rngmod.DATA, 0)
    x0 = g.standard_normal(d)
    A, b = [], []
    for _ in range(n_nodes):
        a = g.standard_normal((m_per_node, d))
        u = g.standard_normal(d)
        u /= np.linalg.norm(u)
        A.append(a)
        b.append(a @ (x0 + heterogeneity * u))
    return ProblemSpec(ProblemKind.QUADRATIC, tuple(A), tuple(b), noise_sigma=noise_sigma)


def synth_two_class(n_rows, d, separation=1.0, seed=0) -> Dataset:
    """Two Gaussian blobs at ``+/- separation * mu / ||mu||`` with balanced labels."""
    g = rngmod.stream(seed, rngmod.DATA, 2)
    mu = g.standard_normal(d)
    mu *= separation / np.linalg.norm(mu)
    y = np.where(np.arange(n_rows) % 2 == 0, 1.0, -1.0)
    X = g.standard_normal((n_rows, d)) + y[:, None] * mu
    return Dataset(X, y)


def logistic_from_dataset(dataset: Dataset, n_nodes, strategy="shuffled", seed=0, l2_reg=0.0,
                          noise_sigma=0.0) -> ProblemSpec:
    parts = partition(dataset, n_nodes, strategy, seed)
    y = np.where(dataset.labels > 0, 1.0, -1.0)
    return ProblemSpec(ProblemKind.LOGISTIC, tuple(dataset.features[p] for p in parts),
                       tuple(y[p] for p in parts), l2_reg=l2_reg, noise_sigma=noise_sigma)


def quadratic_from_dataset(dataset: Dataset, n_nodes, strategy="shuffled", seed=0, noise_sigma=0.0) -> ProblemSpec:
    parts = partition(dataset, n_nodes, strategy, seed)
    return ProblemSpec(ProblemKind.QUADRATIC, tuple(dataset.features[p] for p in parts),
                       tuple(dataset.labels[p] for p in parts), noise_sigma=noise_sigma)


# ---------------------------------------------------------------- gradients

def grad_stochastic(spec: ProblemSpec, node: int, x, batch_size: int | None, rng=None) -> np.ndarray:
    """Minibatch gradient (sampled without replacement) plus optional noise.

    A full batch with ``noise_sigma = 0`` returns the exact local gradient and
    never touches ``rng``.
    """
    x = np.asarray(x, dtype=float)
    m = spec.m(node)
    if batch_size is None:
        batch_size = m
    if not 1 <= batch_size <= m:
        raise ParameterError(f"batch_size must lie in [1, {m}], got {batch_size}")
    if rng is None and (batch_size < m or spec.noise_sigma > 0):
        raise ParameterError("a stochastic gradient needs a random stream")
    if batch_size == m:
        g = spec.local_grad(node, x)
    else:
        g = spec._rows_grad(node, x, rng.choice(m, size=batch_size, replace=False))
    if spec.noise_sigma > 0:
        g = g + spec.noise_sigma * rng.standard_normal(x.size)
    return g


# ---------------------------------------------------------------- constants

def smoothness(spec: ProblemSpec) -> float:
    lam = max(np.linalg.eigvalsh(a.T @ a)[-1] / a.shape[0] for a in spec.A)
    if spec.kind is ProblemKind.QUADRATIC:
        return float(lam)
    return float(lam / 4 + spec.l2_reg)


def quadratic_optimum(spec: ProblemSpec):
    """Exact minimiser of the pooled least-squares objective, or ``None`` if singular."""
    H = sum(a.T @ a / a.shape[0] for a in spec.A)
    r = sum(a.T @ v / a.shape[0] for a, v in zip(spec.A, spec.b))
    if np.linalg.matrix_rank(H) < H.shape[0]:
        return None
    return np.linalg.solve(H, r)


def outer_variance(spec: ProblemSpec, x) -> float:
    """(1/n) sum_i ||grad f_i(x) - grad f(x)||^2."""
    G = spec.local_grads(x)
    return float(np.mean(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))


def inner_variance(spec: ProblemSpec, node, x, batch_size, rng, draws) -> float:
    exact = spec.local_grad(node, x)
    diffs = [grad_stochastic(spec, node, x, batch_size, rng) - exact for _ in range(draws)]
    return float(np.mean(np.sum(np.square(diffs), axis=1)))


def constants(spec: ProblemSpec, probe_points: int = 8, rng=None, draws: int = 200,
              batch_size: int | None = 1) -> ProblemConstants:
    """Measure L exactly and sigma^2, zeta^2 as maxima over probe points.

    Probes are the origin, the optimum when known, and ``probe_points``
    standard-normal points. ``sigma2_hat`` uses ``draws`` gradients of the
    given batch size per node and probe.
    """
    if rng is None:
        rng = rngmod.stream(0, rngmod.PROBE)
    d = spec.dim
    x_star = f_star = None
    if spec.kind is ProblemKind.QUADRATIC:
        x_star = quadratic_optimum(spec)
        if x_star is not None:
            f_star = spec.loss(x_star)
    probes = [np.zeros(d)] + ([x_star] if x_star is not None else [])
    probes += [rng.standard_normal(d) for _ in range(probe_points)]
    zeta2 = max(outer_variance(spec, p) for p in probes)
    if spec.is_deterministic(batch_size):
        sigma2 = 0.0
    else:
        sigma2 = max(inner_variance(spec, i, p, batch_size, rng, draws)
                     for p in probes for i in range(spec.n_nodes))
    return ProblemConstants(smoothness(spec), sigma2, zeta2, x_star, f_star)
