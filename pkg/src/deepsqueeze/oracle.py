"""Global-matrix replay of DeepSqueeze and checks of its unrolled forms.

The replay keeps node models as columns of ``X`` (d x n) and applies

    V_t     = X_t - gamma G_t + Delta_{t-1}
    Delta_t = V_t - C[V_t]                      (column-wise)
    X_{t+1} = (X_t - gamma G_t) W_eff + (Delta_{t-1} - Delta_t)(W_eff - I)

with no reference to the engine's node states or message passing. Gradients
and compressor draws use the same keyed streams as the engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .compression import compress
from .engine import Algorithm, DIVERGENCE_LIMIT, RunConfig, Trace, metrics, round_bits
from .errors import DivergenceError, ParameterError
from .problems import ProblemSpec, grad_stochastic
from .topology import averaging_matrix, effective, spectral

__all__ = [
    "GlobalState",
    "OracleRun",
    "matrix_run",
    "closed_form",
    "closed_form_check",
    "printed_form_deviation",
    "matrix_power",
    "matrix_power_eig",
    "consensus_decay_check",
    "ConsensusDecay",
]


@dataclass
class GlobalState:
    X: np.ndarray
    Delta: np.ndarray
    Delta_prev: np.ndarray


@dataclass
class OracleRun:
    trace: Trace
    X: np.ndarray        # (T+1, d, n)
    G: np.ndarray        # (T, d, n)
    Delta: np.ndarray    # (T, d, n)
    gamma: np.ndarray    # (T,)
    W_eff: np.ndarray


def _gradients(problem: ProblemSpec, X, t, seed, batch_size):
    cols = []
    deterministic = problem.is_deterministic(batch_size)
    for i in range(X.shape[1]):
        if deterministic:
            cols.append(problem.local_grad(i, X[:, i]))
        else:
            cols.append(grad_stochastic(problem, i, X[:, i], batch_size,
                                        rngmod.stream(seed, rngmod.GRADIENT, i, t)))
    return np.column_stack(cols)


def matrix_run(config: RunConfig, problem: ProblemSpec) -> OracleRun:
    if config.algorithm is not Algorithm.DEEPSQUEEZE:
        raise ParameterError("the matrix oracle replays DeepSqueeze only")
    d, n = problem.dim, problem.n_nodes
    W_eff = effective(config.topology, config.eta).entries
    shift = W_eff - np.eye(n)
    per_round = round_bits(config.algorithm, config.topology, config.compressor, d)

    state = GlobalState(np.zeros((d, n)), np.zeros((d, n)), np.zeros((d, n)))
    trace = Trace()
    trace.records.append(metrics(problem, state.X, state.Delta, 0, 0))
    Xs, Gs, Ds, gammas = [state.X], [], [], []
    for t in range(config.T):
        gamma = config.gamma_at(t)
        G = _gradients(problem, state.X, t, config.seed, config.batch_size)
        V = state.X - gamma * G + state.Delta
        C = np.column_stack([
            compress(config.compressor, V[:, i], rngmod.stream(config.seed, rngmod.COMPRESSOR, i, t)).decoded
            for i in range(n)
        ])
        Delta = V - C
        X_next = (state.X - gamma * G) @ W_eff + (state.Delta - Delta) @ shift
        state = GlobalState(X_next, Delta, state.Delta)
        Xs.append(X_next)
        Gs.append(G)
        Ds.append(Delta)
        gammas.append(gamma)
        if not np.all(np.isfinite(X_next)) or np.max(np.abs(X_next)) > DIVERGENCE_LIMIT:
            trace.status = "diverged"
            trace.diverged_at = t + 1
            raise DivergenceError(t + 1, f"oracle replay diverged at iteration {t + 1}", trace)
        if (t + 1) % config.eval_every == 0 or t + 1 == config.T:
            trace.records.append(metrics(problem, X_next, Delta, t + 1, (t + 1) * per_round))
    return OracleRun(trace, np.array(Xs), np.array(Gs), np.array(Ds), np.array(gammas), W_eff)


# ---------------------------------------------------------------- closed forms

def matrix_power(M, k: int) -> np.ndarray:
    """M^k by repeated multiplication."""
    out = np.eye(M.shape[0])
    for _ in range(k):
        out = out @ M
    return out


def matrix_power_eig(M, k: int) -> np.ndarray:
    """M^k of a symmetric matrix through its eigendecomposition."""
    lam, P = np.linalg.eigh(M)
    return (P * lam**k) @ P.T


def _powers(M, k):
    out = [np.eye(M.shape[0])]
    for _ in range(k):
        out.append(out[-1] @ M)
    return out


def closed_form(run: OracleRun, t: int) -> np.ndarray:
    """X_t from the exact unrolling of the recursion (constant step size).

    X_t = X_0 W^t - gamma sum_{s<t} G_s W^{t-s} - Delta_{t-1}(W - I)
          - sum_{s<=t-2} Delta_s (W - I)^2 W^{t-2-s},     W = W_eff
    """
    horizon = run.G.shape[0]
    if not 0 <= t <= horizon:
        raise ParameterError(f"t={t} outside stored horizon [0, {horizon}]")
    if t > 0 and not np.all(run.gamma[:t] == run.gamma[0]):
        raise ParameterError("closed form assumes a constant step size")
    W = run.W_eff
    n = W.shape[0]
    shift = W - np.eye(n)
    P = _powers(W, t)
    X = run.X[0] @ P[t]
    if t == 0:
        return X
    gamma = run.gamma[0]
    for s in range(t):
        X = X - gamma * run.G[s] @ P[t - s]
    X = X - run.Delta[t - 1] @ shift
    shift2 = shift @ shift
    for s in range(t - 1):
        X = X - run.Delta[s] @ shift2 @ P[t - 2 - s]
    return X


def closed_form_check(run: OracleRun, t: int) -> float:
    """Relative Frobenius gap between the closed form and the recursion at ``t``."""
    Xc = closed_form(run, t)
    Xr = run.X[t]
    return float(np.linalg.norm(Xc - Xr) / max(1.0, np.linalg.norm(Xr)))


def printed_form_deviation(run: OracleRun, t: int, eta: float) -> float:
    """Same gap for the display with a standalone eta, +sum and exponent t-s.

    Reported for information only; it is not expected to vanish.
    """
    W = run.W_eff
    n = W.shape[0]
    shift = W - np.eye(n)
    P = _powers(W, t)
    gamma = run.gamma[0]
    X = np.zeros_like(run.X[0])
    for s in range(t):
        X = X - gamma * run.G[s] @ P[t - s]
    if t >= 1:
        X = X - eta * run.Delta[t - 1] @ shift
    for s in range(t - 1):
        X = X + eta * run.Delta[s] @ shift @ shift @ P[t - s]
    Xr = run.X[t]
    return float(np.linalg.norm(X - Xr) / max(1.0, np.linalg.norm(Xr)))


# ---------------------------------------------------------------- consensus

@dataclass
class ConsensusDecay:
    ratios: np.ndarray
    norms: np.ndarray
    bound: float
    ok: bool


def consensus_decay_check(W_eff, X0, steps: int, tol: float = 1e-10) -> ConsensusDecay:
    """Gossip without gradients or compression: disagreement shrinks by lambda-bar.

    Checks ``||X_t (I - A_n)||_F <= lambda_bar^t ||X_0 (I - A_n)||_F`` and the
    per-step ratios against ``lambda_bar = max(|lambda_2|, |lambda_n|)``.
    """
    W = np.asarray(W_eff, dtype=float)
    n = W.shape[0]
    lam_bar = spectral(W).contraction
    proj = np.eye(n) - averaging_matrix(n)
    X = np.asarray(X0, dtype=float)
    norms = [np.linalg.norm(X @ proj)]
    for _ in range(steps):
        X = X @ W
        norms.append(np.linalg.norm(X @ proj))
    norms = np.array(norms)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(norms[:-1] > 0, norms[1:] / norms[:-1], 0.0)
    powers = lam_bar ** np.arange(steps + 1)
    ok = bool(np.all(norms <= powers * norms[0] + tol) and np.all(ratios <= lam_bar + tol))
    return ConsensusDecay(ratios, norms, lam_bar, ok)
