"""Node-wise simulation of DeepSqueeze and its baselines.

Each round runs in three phases over a frozen snapshot of the previous
states: every node computes its gradient and outgoing message, messages are
delivered to the inboxes of all nodes that weight the sender, and then every
node commits its new state from its inbox. Nothing a node writes is visible
to another node until the next round, so the node visiting order cannot
change the result.

Gradient noise for node ``i`` at round ``t`` comes from the stream keyed
``(seed, GRADIENT, i, t)``; compressor randomness from ``(seed, COMPRESSOR,
i, t)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import rng as rngmod
from .compression import CompressedMessage, CompressorSpec, Kind, compress, message_bits
from .errors import DivergenceError, ParameterError
from .problems import ProblemSpec, grad_stochastic
from .topology import MixingMatrix, effective, validate

__all__ = [
    "Algorithm",
    "RunConfig",
    "NodeState",
    "TraceRecord",
    "Trace",
    "RoundContext",
    "step_deepsqueeze",
    "step_dpsgd",
    "step_dcd_psgd",
    "step_choco_sgd",
    "step_central",
    "run",
    "metrics",
    "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e12
CSV_HEADER = ("t", "loss", "grad_norm2", "consensus2", "delta_mass", "bits_cum")


class Algorithm(str, Enum):
    DEEPSQUEEZE = "deepsqueeze"
    DPSGD = "dpsgd"
    DCDPSGD = "dcdpsgd"
    CHOCOSGD = "chocosgd"
    CENTRAL = "central"


@dataclass(frozen=True)
class RunConfig:
    algorithm: Algorithm
    gamma: float
    eta: float
    T: int
    topology: MixingMatrix
    compressor: CompressorSpec = field(default_factory=CompressorSpec.identity)
    batch_size: int | None = None
    seed: int = 0
    eval_every: int = 1
    lr_decay: tuple[int, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if int(self.T) < 1:
            raise ParameterError(f"T must be >= 1, got {self.T}")
        if int(self.eval_every) < 1:
            raise ParameterError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.lr_decay is not None:
            every, factor = self.lr_decay
            if int(every) < 1 or not factor > 0:
                raise ParameterError(f"bad lr_decay {self.lr_decay}")

    def gamma_at(self, t: int) -> float:
        if self.lr_decay is None:
            return self.gamma
        every, factor = self.lr_decay
        return self.gamma * factor ** (t // int(every))


@dataclass
class NodeState:
    x: np.ndarray
    delta: np.ndarray
    inbox: list = field(default_factory=list)
    replicas: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, d: int, holds=()):
        return cls(np.zeros(d), np.zeros(d), [], {j: np.zeros(d) for j in holds})


@dataclass(frozen=True)
class TraceRecord:
    t: int
    loss: float
    grad_norm2: float
    consensus2: float
    delta_mass: float
    bits_cum: int

    def row(self):
        return (str(self.t), repr(self.loss), repr(self.grad_norm2), repr(self.consensus2),
                repr(self.delta_mass), str(self.bits_cum))


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    status: str = "ok"
    diverged_at: int | None = None
    history: dict | None = None

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(r.row() for r in self.records)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


@dataclass
class RoundContext:
    """Everything a node needs to draw its randomness for round ``t``."""

    problem: ProblemSpec
    t: int
    seed: int = 0
    batch_size: int | None = None

    def grad(self, i: int, x) -> np.ndarray:
        if self.problem.is_deterministic(self.batch_size):
            return self.problem.local_grad(i, x)
        return grad_stochastic(self.problem, i, x, self.batch_size,
                               rngmod.stream(self.seed, rngmod.GRADIENT, i, self.t))

    def compressor_rng(self, i: int):
        return rngmod.stream(self.seed, rngmod.COMPRESSOR, i, self.t)


# ---------------------------------------------------------------- helpers

def _order(n, order):
    return range(n) if order is None else order


def _deliver(W: MixingMatrix, outgoing: dict):
    """Barrier: node i receives j's message iff W[i, j] != 0, and always its own."""
    inboxes = {i: [] for i in range(W.n)}
    for i in range(W.n):
        for j in sorted(set(W.neighbors(i)) | {i}):
            inboxes[i].append((j, outgoing[j]))
    return inboxes


def _sends(W: MixingMatrix, i: int) -> bool:
    return any(j != i for j in W.neighbors(i))


def _dense_message(x) -> CompressedMessage:
    return compress(CompressorSpec.identity(), x)


def round_bits(algorithm: Algorithm, W: MixingMatrix, compressor: CompressorSpec, d: int) -> int:
    """Bits all nodes put on the wire in one round."""
    algorithm = Algorithm(algorithm)
    if algorithm is Algorithm.CENTRAL:
        return 32 * d * W.n if W.n > 1 else 0
    per = 32 * d if algorithm is Algorithm.DPSGD else message_bits(compressor, d)
    return per * sum(_sends(W, i) for i in range(W.n))


# ---------------------------------------------------------------- steps

def step_deepsqueeze(states, W: MixingMatrix, gamma, eta, compressor: CompressorSpec,
                     ctx: RoundContext, order=None):
    n = W.n
    w = W.entries
    half, delta_new, outgoing, grads = {}, {}, {}, {}
    for i in _order(n, order):
        s = states[i]
        grads[i] = ctx.grad(i, s.x)
        half[i] = s.x - gamma * grads[i]
        v = half[i] + s.delta
        msg = compress(compressor, v, ctx.compressor_rng(i))
        outgoing[i] = msg
        delta_new[i] = v - msg.decoded
    inboxes = _deliver(W, outgoing)
    new = []
    for i in range(n):
        mix = np.zeros_like(half[i])
        for j, msg in sorted(inboxes[i], key=lambda p: p[0]):
            mix = mix + (w[i, j] - (i == j)) * msg.decoded
        new.append(NodeState(half[i] + eta * mix, delta_new[i], inboxes[i]))
    return new, grads


def step_dpsgd(states, W: MixingMatrix, gamma, eta, ctx: RoundContext, order=None):
    n = W.n
    weff = effective(W, eta).entries
    half, outgoing, grads = {}, {}, {}
    for i in _order(n, order):
        grads[i] = ctx.grad(i, states[i].x)
        half[i] = states[i].x - gamma * grads[i]
        outgoing[i] = _dense_message(half[i])
    inboxes = _deliver(W, outgoing)
    new = []
    for i in range(n):
        x = np.zeros_like(half[i])
        for j, msg in sorted(inboxes[i], key=lambda p: p[0]):
            x = x + weff[i, j] * msg.decoded
        new.append(NodeState(x, np.zeros_like(x), inboxes[i]))
    return new, grads


def _replica_round(states, W, gamma, compressor, ctx, order):
    """Shared first half of the replica-based baselines.

    Each node descends, compresses the gap between its half-step model and
    its own public replica, and every holder of that replica applies the
    decoded correction.
    """
    n = W.n
    half, outgoing, grads = {}, {}, {}
    for i in _order(n, order):
        s = states[i]
        grads[i] = ctx.grad(i, s.x)
        half[i] = s.x - gamma * grads[i]
        outgoing[i] = compress(compressor, half[i] - s.replicas[i], ctx.compressor_rng(i))
    inboxes = _deliver(W, outgoing)
    replicas = []
    for i in range(n):
        r = dict(states[i].replicas)
        for j, msg in inboxes[i]:
            r[j] = r[j] + msg.decoded
        replicas.append(r)
    return half, inboxes, replicas, grads


def step_dcd_psgd(states, W: MixingMatrix, gamma, eta, compressor: CompressorSpec,
                  ctx: RoundContext, order=None):
    """Compressed difference sharing without error memory.

    The model becomes the gossip average of the replicas, so the compression
    error of the shared difference enters the model undamped.
    """
    w = W.entries
    half, inboxes, replicas, grads = _replica_round(states, W, gamma, compressor, ctx, order)
    new = []
    for i in range(W.n):
        r = replicas[i]
        x = r[i].copy()
        for j in sorted(r):
            if j != i:
                x = x + eta * w[i, j] * (r[j] - r[i])
        new.append(NodeState(x, np.zeros_like(x), inboxes[i], r))
    return new, grads


def step_choco_sgd(states, W: MixingMatrix, gamma, eta, compressor: CompressorSpec,
                   ctx: RoundContext, order=None):
    w = W.entries
    half, inboxes, replicas, grads = _replica_round(states, W, gamma, compressor, ctx, order)
    new = []
    for i in range(W.n):
        r = replicas[i]
        x = half[i].copy()
        for j in sorted(r):
            if j != i:
                x = x + eta * w[i, j] * (r[j] - r[i])
        new.append(NodeState(x, np.zeros_like(x), inboxes[i], r))
    return new, grads


def step_central(states, gamma, ctx: RoundContext, order=None):
    n = len(states)
    grads = {i: ctx.grad(i, states[i].x) for i in _order(n, order)}
    xbar = np.mean([s.x for s in states], axis=0)
    gbar = np.mean([grads[i] for i in range(n)], axis=0)
    x = xbar - gamma * gbar
    return [NodeState(x.copy(), np.zeros_like(x)) for _ in range(n)], grads


# ---------------------------------------------------------------- run

def metrics(problem: ProblemSpec, X: np.ndarray, deltas: np.ndarray, t: int, bits: int) -> TraceRecord:
    """Trace metrics for stacked node models ``X`` of shape (d, n)."""
    # identical columns: use the shared model itself so consensus is exactly 0
    xbar = X[:, 0].copy() if np.all(X == X[:, :1]) else X.mean(axis=1)
    g = problem.grad(xbar)
    dev = X - xbar[:, None]
    return TraceRecord(t, problem.loss(xbar), float(g @ g), float(np.sum(dev * dev)),
                       float(np.sum(deltas * deltas)), int(bits))


def _stack(vectors):
    return np.column_stack(vectors)


def _diverged(X):
    return not np.all(np.isfinite(X)) or np.max(np.abs(X)) > DIVERGENCE_LIMIT


def run(config: RunConfig, problem: ProblemSpec, record_history: bool = False, order=None) -> Trace:
    """Execute ``T`` synchronous rounds and return the metric trace.

    With ``record_history`` the trace carries ``X`` (T+1, d, n), ``G`` (T, d, n)
    and, for DeepSqueeze, ``Delta`` (T, d, n) plus the step sizes used.
    """
    W = config.topology
    validate(W)
    if W.n != problem.n_nodes:
        raise ParameterError(f"topology has {W.n} nodes, problem has {problem.n_nodes}")
    d, n = problem.dim, problem.n_nodes
    algo = config.algorithm
    compressor = config.compressor
    if algo in (Algorithm.DEEPSQUEEZE, Algorithm.DCDPSGD, Algorithm.CHOCOSGD):
        compressor.check(d)
    per_round = round_bits(algo, W, compressor, d)

    replicated = algo in (Algorithm.DCDPSGD, Algorithm.CHOCOSGD)
    states = [NodeState.zeros(d, set(W.neighbors(i)) | {i} if replicated else ()) for i in range(n)]
    trace = Trace()
    hist = {"X": [], "G": [], "Delta": [], "gamma": []} if record_history else None

    def snapshot(t):
        X = _stack([s.x for s in states])
        D = _stack([s.delta for s in states])
        trace.records.append(metrics(problem, X, D, t, t * per_round))
        return X

    X0 = snapshot(0)
    if hist is not None:
        hist["X"].append(X0)
    for t in range(config.T):
        gamma = config.gamma_at(t)
        ctx = RoundContext(problem, t, config.seed, config.batch_size)
        if algo is Algorithm.DEEPSQUEEZE:
            states, grads = step_deepsqueeze(states, W, gamma, config.eta, compressor, ctx, order)
        elif algo is Algorithm.DPSGD:
            states, grads = step_dpsgd(states, W, gamma, config.eta, ctx, order)
        elif algo is Algorithm.DCDPSGD:
            states, grads = step_dcd_psgd(states, W, gamma, config.eta, compressor, ctx, order)
        elif algo is Algorithm.CHOCOSGD:
            states, grads = step_choco_sgd(states, W, gamma, config.eta, compressor, ctx, order)
        else:
            states, grads = step_central(states, gamma, ctx, order)
        X = _stack([s.x for s in states])
        if hist is not None:
            hist["X"].append(X)
            hist["G"].append(_stack([grads[i] for i in range(n)]))
            hist["Delta"].append(_stack([s.delta for s in states]))
            hist["gamma"].append(gamma)
        if _diverged(X):
            trace.status = "diverged"
            trace.diverged_at = t + 1
            if hist is not None:
                trace.history = {k: np.array(v) for k, v in hist.items()}
            raise DivergenceError(t + 1, f"{algo.value} diverged at iteration {t + 1}", trace)
        if (t + 1) % config.eval_every == 0 or t + 1 == config.T:
            snapshot(t + 1)
    if hist is not None:
        trace.history = {k: np.array(v) for k, v in hist.items()}
    return trace


def run_safe(config: RunConfig, problem: ProblemSpec, **kwargs) -> Trace:
    """Like :func:`run` but returns the partial trace of a divergent run."""
    try:
        return run(config, problem, **kwargs)
    except DivergenceError as exc:
        return exc.trace


def with_algorithm(config: RunConfig, algorithm) -> RunConfig:
    return replace(config, algorithm=Algorithm(algorithm))
