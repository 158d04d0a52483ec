"""Convergence-theory constants, step-size schedules and pathwise monitors.

The monitors evaluate both sides of the supporting inequalities on a stored
DeepSqueeze trajectory. They only assert when the run is deterministic
(exact gradients, deterministic compressor) and the inequality's own
precondition holds; otherwise the entry is marked skipped with the reason.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InfeasibleError, ParameterError
from .topology import SpectralInfo, averaging_matrix, spectral

__all__ = [
    "TheoryConstants",
    "constants",
    "eta_star",
    "gamma_star",
    "contraction_factors",
    "compress_error_constant",
    "MonitorCheck",
    "MonitorReport",
    "lemma_monitor",
    "gradient_decomposition_check",
    "c2_upper_bound",
]


@dataclass(frozen=True)
class TheoryConstants:
    C0: float
    C1: float
    C2: float
    C3: float
    lambda2_W: float
    lambdaN_W: float
    alpha2: float
    eta: float
    gamma: float
    L: float
    feasible: bool
    violated: tuple[str, ...] = ()

    def to_dict(self):
        out = asdict(self)
        out["violated"] = list(self.violated)
        return out


def constants(alpha2: float, eta: float, W_spectral: SpectralInfo, L: float, gamma: float) -> TheoryConstants:
    if not (math.isfinite(alpha2) and math.isfinite(eta) and math.isfinite(L) and math.isfinite(gamma)):
        raise ParameterError("theory constants need finite inputs")
    if not 0.0 < eta <= 1.0 or L <= 0 or gamma <= 0 or alpha2 < 0:
        raise ParameterError("need eta in (0, 1], L > 0, gamma > 0, alpha2 >= 0")
    lam2, lamn = W_spectral.lambda2, W_spectral.lambdaN
    C0, C1, C2 = mixing_constants(alpha2, eta, W_spectral)
    c3_den = 2.0 - 6.0 * C2 * L**2 * gamma**2
    if c3_den <= 0:
        raise InfeasibleError(f"C3 denominator 2 - 6 C2 L^2 gamma^2 = {c3_den:.3g} is not positive")
    C3 = C2 * L**2 / c3_den

    violated = []
    alpha = math.sqrt(alpha2)
    if alpha >= 1.0 or eta > eta_star(alpha):
        violated.append("eta <= min{1/2, (alpha^(-2/3) - 1)/4}")
    if 1.0 - 3.0 * C2 * L**2 * gamma**2 < 0:
        violated.append("1 - 3 C2 L^2 gamma^2 >= 0")
    if gamma > 1.0 / L:
        violated.append("gamma <= 1/L")
    return TheoryConstants(C0, C1, C2, C3, lam2, lamn, alpha2, eta, gamma, L, not violated, tuple(violated))


def mixing_constants(alpha2: float, eta: float, W_spectral: SpectralInfo):
    """(C0, C1, C2): the step-size independent part of the constants."""
    if not 0.0 < eta <= 1.0 or alpha2 < 0:
        raise ParameterError("need eta in (0, 1] and alpha2 >= 0")
    lam2, lamn = W_spectral.lambda2, W_spectral.lambdaN
    C0 = eta * (1.0 - lamn)
    c1_den = 1.0 - alpha2 * (1.0 + C0) ** 2 * (1.0 + 2.0 * C0)
    if c1_den <= 0:
        raise InfeasibleError(
            f"C1 denominator 1 - alpha^2 (1+C0)^2 (1+2 C0) = {c1_den:.3g} is not positive")
    if lam2 >= 1.0:
        raise InfeasibleError("lambda_2(W) = 1: the graph is disconnected")
    C1 = alpha2 / (c1_den * C0**2) if alpha2 > 0 else 0.0
    C2 = 3.0 / (eta**2 * (1.0 - lam2) ** 2) + 6.0 * C1
    return C0, C1, C2


def eta_star(alpha: float) -> float:
    if not 0.0 <= alpha < 1.0:
        raise ParameterError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return 0.5
    return min(0.5, (alpha ** (-2.0 / 3.0) - 1.0) / 4.0)


def gamma_star(L, C2, sigma, zeta, T, n) -> float:
    if L <= 0 or C2 < 0 or sigma < 0 or zeta < 0 or T < 1 or n < 1:
        raise ParameterError("gamma_star needs L > 0, T >= 1, n >= 1 and nonnegative C2, sigma, zeta")
    return 1.0 / (3.0 * L * math.sqrt(C2) + sigma * math.sqrt(T / n) + zeta ** (2.0 / 3.0) * T ** (1.0 / 3.0))


def c2_upper_bound(alpha: float, lambda2_W: float) -> float:
    """Order-of-magnitude bound on C2 at eta = eta_star(alpha) (constants dropped)."""
    extra = 0.0 if alpha == 0 else alpha**2 / (alpha ** (-2.0 / 3.0) - 1.0)
    return (1.0 + extra) / (1.0 - lambda2_W) ** 2


def remainder_terms(C2: float, T: int) -> dict:
    """The two printed forms of the 1/T remainder; reported, never asserted."""
    return {"main_text": 1.0 / T, "proof": (1.0 + math.sqrt(C2)) / T}


def contraction_factors(W_spectral: SpectralInfo, eta: float):
    """Damping applied to ||Delta_s||_F^2 by DeepSqueeze, CHOCO-SGD and DCD-PSGD."""
    x = eta * (1.0 - W_spectral.lambdaN)
    return x**4, x**2, 1.0


def compress_error_constant(alpha2: float, lambda_n_eff: float) -> float:
    """C4 in terms of the smallest eigenvalue of W_eff; inf when the precondition fails."""
    den = (1.0 - alpha2 * (2.0 - lambda_n_eff) ** 2 * (3.0 - 2.0 * lambda_n_eff)) * (1.0 - lambda_n_eff) ** 2
    return alpha2 / den if den > 0 else math.inf


# ---------------------------------------------------------------- monitors

@dataclass
class MonitorCheck:
    name: str
    lhs: float = math.nan
    rhs: float = math.nan
    holds: bool | None = None
    skipped: str | None = None
    asserted: bool = True

    @property
    def passed(self) -> bool:
        return self.skipped is not None or not self.asserted or bool(self.holds)

    @property
    def verdict(self) -> str:
        if self.skipped:
            return f"skipped: {self.skipped}"
        if not self.asserted:
            return "logged"
        return "pass" if self.holds else "FAIL"


@dataclass
class MonitorReport:
    checks: list[MonitorCheck] = field(default_factory=list)
    alpha2: float = math.nan
    observed_alpha2: float = math.nan
    lambda2_eff: float = math.nan
    lambdaN_eff: float = math.nan
    C4: float = math.nan
    C5: float = math.nan
    sigma2: float = math.nan
    zeta2: float = math.nan

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> MonitorCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _fro2(M):
    return float(np.sum(M * M, axis=(-2, -1))) if M.ndim == 2 else np.sum(M * M, axis=(-2, -1))


def gradient_decomposition_check(G, X, problem, sigma2, zeta2, L, rtol=1e-12):
    """Per-step ||G_t||^2 <= n sigma^2 + 3L^2 ||X_t(I - A_n)||^2 + 3n zeta^2 + 3n ||grad f(xbar_t)||^2.

    ``G`` has shape (T, d, n) and ``X`` (T or more, d, n). Returns the two
    sides as arrays.
    """
    T, _, n = G.shape
    proj = np.eye(n) - averaging_matrix(n)
    lhs = _fro2(G)
    rhs = np.empty(T)
    for t in range(T):
        xbar = X[t].mean(axis=1)
        g = problem.grad(xbar)
        rhs[t] = n * sigma2 + 3 * L**2 * _fro2(X[t] @ proj) + 3 * n * zeta2 + 3 * n * float(g @ g)
    return lhs, rhs


def lemma_monitor(history: dict, problem, W, eta: float, L: float, alpha2: float,
                  deterministic: bool = True, sigma2: float = 0.0, rtol: float = 1e-12) -> MonitorReport:
    """Evaluate the compression-error, consensus and gradient-size bounds on a run.

    ``history`` needs ``X`` (T+1, d, n), ``G`` (T, d, n), ``Delta`` (T, d, n)
    and ``gamma`` (T,) from a DeepSqueeze run started at X_0 = 0 with a
    constant step size. ``alpha2`` should be a pathwise bound on
    ||C[v] - v||^2 / ||v||^2 for the compressor used.
    """
    X, G, Delta, gammas = (np.asarray(history[k]) for k in ("X", "G", "Delta", "gamma"))
    T, d, n = G.shape
    gamma = float(gammas[0])
    W = np.asarray(W, dtype=float)
    W_eff = (1 - eta) * np.eye(n) + eta * W
    spec_eff = spectral(W_eff)
    lam2, lamn = spec_eff.lambda2, spec_eff.lambdaN
    shift = W_eff - np.eye(n)
    proj = np.eye(n) - averaging_matrix(n)

    # Pathwise compression ratio actually met on this run; the precondition
    # uses the larger of this and the supplied bound.
    V = np.concatenate([X[:T] - gammas[:, None, None] * G + np.concatenate([np.zeros((1, d, n)), Delta[:-1]]),
                        ]) if T else np.zeros((0, d, n))
    vn = np.sum(V * V, axis=1)
    dn = np.sum(Delta * Delta, axis=1)
    observed = float(np.max(np.where(vn > 0, dn / np.where(vn > 0, vn, 1.0), 0.0))) if T else 0.0
    alpha2 = max(alpha2, observed)

    # Outer variance measured along the averaged iterates.
    zeta2 = max(_outer(problem, X[t].mean(axis=1)) for t in range(T))
    report = MonitorReport(alpha2=alpha2, observed_alpha2=observed, lambda2_eff=lam2, lambdaN_eff=lamn, sigma2=sigma2, zeta2=zeta2)

    common_skip = None
    if not np.all(gammas == gamma):
        common_skip = "step size not constant"
    elif np.any(X[0] != 0):
        common_skip = "X_0 is not zero"
    elif lamn < -1e-12:
        common_skip = "W_eff not positive semidefinite"
    elif n < 2:
        common_skip = "single node"

    sum_G2 = float(np.sum(_fro2(G)))
    sum_G2_head = float(np.sum(_fro2(G[:-1]))) if T > 1 else 0.0
    sum_DW = float(np.sum(_fro2(Delta @ shift)))
    sum_cons = float(np.sum(_fro2(X[:T] @ proj)))

    precondition = (2 - lamn) ** 2 * (3 - 2 * lamn) * alpha2 < 1.0
    C4 = compress_error_constant(alpha2, lamn)
    C5 = 3.0 / (1.0 - lam2) ** 2 + 6.0 * C4
    report.C4, report.C5 = C4, C5

    def skip_reason(extra=None):
        if common_skip:
            return common_skip
        if not precondition:
            return "precondition (2 - lambda_n)^2 (3 - 2 lambda_n) <= 1/alpha^2 fails"
        return extra

    # Compression error damped by (W_eff - I).
    c = MonitorCheck("bound_compress_error", sum_DW, C4 * gamma**2 * sum_G2, asserted=deterministic)
    c.skipped = skip_reason()
    if c.skipped is None:
        c.holds = c.lhs <= c.rhs * (1 + rtol)
    report.checks.append(c)

    # Consensus bound before the compression lemma is substituted.
    c = MonitorCheck("bound_diff_X.unrolled", sum_cons,
                     3 * gamma**2 / (1 - lam2) ** 2 * sum_G2_head + 6 * sum_DW, asserted=deterministic)
    c.skipped = common_skip
    if c.skipped is None:
        c.holds = c.lhs <= c.rhs * (1 + rtol)
    report.checks.append(c)

    c = MonitorCheck("bound_diff_X.C5", sum_cons, C5 * gamma**2 * sum_G2, asserted=deterministic)
    c.skipped = skip_reason()
    if c.skipped is None:
        c.holds = c.lhs <= c.rhs * (1 + rtol)
    report.checks.append(c)

    den = 1 - 3 * C5 * L**2 * gamma**2
    grad_sq = sum(float(np.sum(problem.grad(X[t].mean(axis=1)) ** 2)) for t in range(T))
    rhs = (C5 * gamma**2 * n * sigma2 * T + 3 * n * C5 * gamma**2 * zeta2 * T
           + 3 * n * C5 * gamma**2 * grad_sq) / den if den > 0 else math.inf
    c = MonitorCheck("bound_diff_X", sum_cons, rhs, asserted=deterministic)
    c.skipped = skip_reason(None if den > 0 else "1 - 3 C5 L^2 gamma^2 <= 0")
    if c.skipped is None:
        c.holds = c.lhs <= c.rhs * (1 + rtol)
    report.checks.append(c)

    lhs, rhs = gradient_decomposition_check(G, X, problem, sigma2, zeta2, L)
    c = MonitorCheck("bound_G", float(np.max(lhs / rhs)), 1.0, asserted=deterministic)
    c.holds = bool(np.all(lhs <= rhs * (1 + rtol) + 1e-12))
    report.checks.append(c)
    return report


def _outer(problem, x):
    Gl = problem.local_grads(x)
    return float(np.mean(np.sum((Gl - Gl.mean(axis=0)) ** 2, axis=1)))
