"""Gossip mixing matrices: construction, validation and spectra.

All matrices are symmetric and doubly stochastic. ``effective`` forms the
damped matrix ``(1 - eta) I + eta W`` that every algorithm in the engine
actually mixes with.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import InvalidTopologyError, NumericError, ParameterError

__all__ = [
    "MixingMatrix",
    "SpectralInfo",
    "build_ring",
    "build_complete",
    "build_from_edges",
    "validate",
    "violations",
    "spectral",
    "effective",
    "averaging_matrix",
    "from_config",
]

ROW_SUM_TOL = 1e-12
CONNECTIVITY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise InvalidTopologyError(f"mixing matrix must be square, got shape {arr.shape}", ["shape"])
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def neighbors(self, i: int) -> list[int]:
        """Nodes ``j`` with ``W[i, j] != 0``, including ``i`` itself when weighted."""
        return [int(j) for j in np.flatnonzero(self.entries[i])]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self):
        return f"MixingMatrix(n={self.n})"


@dataclass(frozen=True)
class SpectralInfo:
    eigenvalues: tuple[float, ...]

    @property
    def lambda2(self) -> float:
        return self.eigenvalues[1] if len(self.eigenvalues) > 1 else 0.0

    @property
    def lambdaN(self) -> float:
        return self.eigenvalues[-1]

    @property
    def gap(self) -> float:
        return 1.0 - self.lambda2

    @property
    def contraction(self) -> float:
        """max(|lambda_2|, |lambda_n|): per-step gossip contraction of disagreement."""
        if len(self.eigenvalues) == 1:
            return 0.0
        return max(abs(self.lambda2), abs(self.lambdaN))


def build_ring(n: int) -> MixingMatrix:
    if n < 2:
        raise InvalidTopologyError(f"ring needs at least 2 nodes, got {n}", ["shape"])
    w = np.zeros((n, n))
    idx = np.arange(n)
    np.add.at(w, (idx, idx), 1 / 3)
    np.add.at(w, (idx, (idx + 1) % n), 1 / 3)
    np.add.at(w, (idx, (idx - 1) % n), 1 / 3)
    return MixingMatrix(w)


def build_complete(n: int) -> MixingMatrix:
    if n < 1:
        raise InvalidTopologyError(f"complete graph needs at least 1 node, got {n}", ["shape"])
    return MixingMatrix(np.full((n, n), 1.0 / n))


def _is_connected(n, adjacency):
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in adjacency[i]:
            if j not in seen:
                seen.add(j)
                frontier.append(j)
    return len(seen) == n


def build_from_edges(n: int, edges) -> MixingMatrix:
    """Metropolis-Hastings weights for an undirected graph.

    ``W[i, j] = 1 / (1 + max(deg_i, deg_j))`` on edges and the diagonal takes
    the remaining mass of each row.
    """
    if n < 1:
        raise InvalidTopologyError(f"need at least 1 node, got {n}", ["shape"])
    adjacency = [set() for _ in range(n)]
    for e in edges:
        i, j = (int(v) for v in e)
        if not (0 <= i < n and 0 <= j < n):
            raise InvalidTopologyError(f"edge ({i}, {j}) out of range for n={n}", ["shape"])
        if i == j:
            raise InvalidTopologyError(f"self-loop edge ({i}, {i}) not allowed", ["shape"])
        adjacency[i].add(j)
        adjacency[j].add(i)
    if not _is_connected(n, adjacency):
        raise InvalidTopologyError("graph is disconnected", ["disconnected"])
    deg = [len(a) for a in adjacency]
    w = np.zeros((n, n))
    for i in range(n):
        for j in adjacency[i]:
            w[i, j] = 1.0 / (1 + max(deg[i], deg[j]))
    for i in range(n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return MixingMatrix(w)


def violations(W) -> list[str]:
    """Names of every failed mixing-matrix invariant (empty when valid)."""
    w = np.asarray(W, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        return ["shape"]
    found = []
    symmetric = bool(np.array_equal(w, w.T))
    if not symmetric:
        found.append("asymmetric")
    if np.any(np.abs(w.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        found.append("row-sum")
    if np.any(w < 0):
        found.append("negative-entry")
    if w.shape[0] > 1 and np.all(np.isfinite(w)):
        # Spectral connectivity test; only meaningful on the symmetric part.
        lam = np.linalg.eigvalsh((w + w.T) / 2)
        if lam[-2] >= 1.0 - CONNECTIVITY_TOL:
            found.append("disconnected")
    return found


def validate(W) -> None:
    found = violations(W)
    if found:
        raise InvalidTopologyError("invalid mixing matrix: " + ", ".join(found), found)


def spectral(W) -> SpectralInfo:
    w = np.asarray(W, dtype=float)
    try:
        lam = np.linalg.eigvalsh(w)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    return SpectralInfo(tuple(float(v) for v in lam[::-1]))


def effective(W, eta: float) -> MixingMatrix:
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"averaging rate eta must lie in [0, 1], got {eta}")
    w = np.asarray(W, dtype=float)
    return MixingMatrix((1.0 - eta) * np.eye(w.shape[0]) + eta * w)


def averaging_matrix(n: int) -> np.ndarray:
    """A_n = 11^T / n."""
    return np.full((n, n), 1.0 / n)


def from_config(block: dict, n_nodes: int) -> MixingMatrix:
    """Build from a config block: ``kind = "ring" | "complete" | "edges"``."""
    kind = block.get("kind", "ring")
    if kind == "ring":
        W = build_ring(n_nodes)
    elif kind == "complete":
        W = build_complete(n_nodes)
    elif kind == "edges":
        if "edges" not in block:
            raise ParameterError("topology.kind = 'edges' requires topology.edges")
        W = build_from_edges(n_nodes, block["edges"])
    else:
        raise ParameterError(f"unknown topology kind {kind!r}")
    validate(W)
    return W


def all_pairs(n):
    """Edge list of the complete graph; convenience for tests and configs."""
    return list(combinations(range(n), 2))
