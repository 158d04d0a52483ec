"""Desk-scale benchmarks and the verification suite behind ``verify --preset desk``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from . import theory
from .compression import CompressorSpec, calibrated_alpha2
from .engine import Algorithm, RunConfig, run, with_algorithm
from .oracle import closed_form_check, consensus_decay_check, matrix_run
from .problems import ProblemSpec, constants as problem_constants, synth_quadratic
from .topology import build_ring, effective, spectral

__all__ = [
    "VerifyRow",
    "quadratic_benchmark",
    "oracle_compressors",
    "relative_gap",
    "mean_iterate_gap",
    "monitor_run",
    "verify_rows",
]

D = 32
M_PER_NODE = 40
HETEROGENEITY = 0.5
ORACLE_GAMMA = 0.05
ORACLE_ETA = 0.3
ORACLE_T = 200
MONITOR_T = 500

ORACLE_TOL = 1e-10
CLOSED_FORM_TOL = 1e-9
REDUCTION_TOL = 1e-12
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class VerifyRow:
    check: str
    value: float
    bound: float
    status: str

    def line(self) -> str:
        return f"{self.check},{self.value!r},{self.bound!r},{self.status}"


def quadratic_benchmark(n: int = 8, seed: int = 1, noise_sigma: float = 0.0) -> ProblemSpec:
    return synth_quadratic(n, D, M_PER_NODE, HETEROGENEITY, seed, noise_sigma)


def oracle_compressors():
    return [CompressorSpec.topk(8, D), CompressorSpec.bitquant(2), CompressorSpec.identity()]


def relative_gap(A, B) -> float:
    """max |A - B| over all entries, relative to max(1, max |B|)."""
    A, B = np.asarray(A), np.asarray(B)
    return float(np.max(np.abs(A - B)) / max(1.0, float(np.max(np.abs(B)))))


def mean_iterate_gap(history) -> float:
    """max_t ||xbar_{t+1} - (xbar_t - gamma_t gbar_t)||_inf."""
    X, G, g = history["X"], history["G"], np.asarray(history["gamma"])
    xbar = X.mean(axis=2)
    gbar = G.mean(axis=2)
    pred = xbar[:-1] - g[:, None] * gbar
    return float(np.max(np.abs(xbar[1:] - pred))) if len(g) else 0.0


def oracle_config(compressor: CompressorSpec, n: int = 8, T: int = ORACLE_T) -> RunConfig:
    return RunConfig(Algorithm.DEEPSQUEEZE, ORACLE_GAMMA, ORACLE_ETA, T, build_ring(n), compressor)


def monitor_run(n: int, compressor: CompressorSpec, T: int = MONITOR_T, seed: int = 1):
    """DeepSqueeze at eta = eta_star(alpha-hat) and the theory step size.

    Returns ``(report, config, trace, problem_constants)``.
    """
    problem = quadratic_benchmark(n, seed)
    W = build_ring(n)
    a2 = calibrated_alpha2(compressor, D)
    eta = theory.eta_star(math.sqrt(a2))
    pc = problem_constants(problem, rng=rngmod.stream(seed, rngmod.PROBE, 0, 0))
    C2 = theory.mixing_constants(a2, eta, spectral(W))[2]
    gamma = theory.gamma_star(pc.L, C2, 0.0, math.sqrt(pc.zeta2_hat), T, n)
    config = RunConfig(Algorithm.DEEPSQUEEZE, gamma, eta, T, W, compressor)
    trace = run(config, problem, record_history=True)
    report = theory.lemma_monitor(trace.history, problem, W, eta, pc.L, a2)
    return report, config, trace, pc


def _row(check, value, bound):
    return VerifyRow(check, float(value), float(bound), "pass" if value <= bound else "FAIL")


def verify_rows():
    """Run the desk verification suite. Returns (rows, constants table)."""
    rows = []
    problem = quadratic_benchmark()
    for comp in oracle_compressors():
        cfg = oracle_config(comp)
        engine = run(cfg, problem, record_history=True)
        oracle = matrix_run(cfg, problem)
        rows.append(_row(f"oracle:{comp.label}", relative_gap(engine.history["X"], oracle.X), ORACLE_TOL))
        cf = max(closed_form_check(oracle, t) for t in range(ORACLE_T + 1))
        rows.append(_row(f"closed_form:{comp.label}", cf, CLOSED_FORM_TOL))
        rows.append(_row(f"mean_iterate:{comp.label}", mean_iterate_gap(engine.history), MEAN_TOL))

    base = RunConfig(Algorithm.DPSGD, ORACLE_GAMMA, ORACLE_ETA, 100, build_ring(8))
    ref = run(base, problem, record_history=True).history["X"]
    for algo in (Algorithm.DEEPSQUEEZE, Algorithm.DCDPSGD, Algorithm.CHOCOSGD):
        X = run(with_algorithm(base, algo), problem, record_history=True).history["X"]
        rows.append(_row(f"reduction:{algo.value}", relative_gap(X, ref), REDUCTION_TOL))

    W_eff = effective(build_ring(8), ORACLE_ETA)
    X0 = rngmod.stream(0, rngmod.PROBE, 1, 0).standard_normal((D, 8))
    decay = consensus_decay_check(W_eff, X0, 50)
    worst = float(np.max(decay.ratios)) if decay.ratios.size else 0.0
    rows.append(VerifyRow("consensus_decay", worst, decay.bound, "pass" if decay.ok else "FAIL"))

    report, config, _, pc = monitor_run(8, CompressorSpec.topk(D // 2, D))
    for c in report.checks:
        status = "pass" if c.passed and not c.skipped else ("FAIL" if not c.passed else c.verdict)
        rows.append(VerifyRow(f"monitor:{c.name}", c.lhs, c.rhs, status))

    tc = theory.constants(report.alpha2, config.eta, spectral(config.topology), pc.L, config.gamma)
    table = dict(tc.to_dict())
    table.update(C4=report.C4, C5=report.C5, observed_alpha2=report.observed_alpha2,
                 zeta2=report.zeta2, eta_star=theory.eta_star(math.sqrt(report.alpha2)))
    table.update({f"remainder_{k}": v for k, v in theory.remainder_terms(tc.C2, config.T).items()})
    return rows, table
