import math

import numpy as np
import pytest

from deepsqueeze import theory
from deepsqueeze.compression import CompressorSpec
from deepsqueeze.desk import monitor_run, quadratic_benchmark
from deepsqueeze.engine import RunConfig, run
from deepsqueeze.errors import InfeasibleError, ParameterError
from deepsqueeze.topology import build_ring, spectral


RING4 = spectral(build_ring(4))
RING8 = spectral(build_ring(8))


def test_alpha_zero_constants():
    C0, C1, C2 = theory.mixing_constants(0.0, 0.5, RING8)
    assert C1 == 0.0
    assert C2 == pytest.approx(3 / (0.25 * (1 - RING8.lambda2) ** 2))


def test_c0_ring4():
    assert theory.mixing_constants(0.1, 0.5, RING4)[0] == pytest.approx(2 / 3, abs=1e-12)


def test_c1_denominator_infeasible():
    C0 = 2 / 3
    alpha2 = 1.0 / ((1 + C0) ** 2 * (1 + 2 * C0)) + 1e-9
    with pytest.raises(InfeasibleError):
        theory.mixing_constants(alpha2, 0.5, RING4)


def test_full_constants_and_conditions():
    tc = theory.constants(0.01, 0.5, RING8, L=2.0, gamma=1e-3)
    assert tc.C3 == pytest.approx(tc.C2 * 4 / (2 - 6 * tc.C2 * 4 * 1e-6))
    assert tc.feasible and tc.violated == ()
    tc = theory.constants(0.5, 0.1, RING8, L=2.0, gamma=1e-4)
    assert not tc.feasible and tc.violated[0].startswith("eta <=")
    with pytest.raises(InfeasibleError):
        theory.constants(0.01, 0.5, RING8, L=2.0, gamma=1.0)
    with pytest.raises(ParameterError):
        theory.constants(0.01, 0.0, RING8, L=2.0, gamma=0.1)


def test_eta_star_examples():
    assert theory.eta_star(0.0) == 0.5
    assert theory.eta_star(0.125) == 0.5
    grid = np.linspace(0.35, 0.999, 200)
    vals = [theory.eta_star(a) for a in grid]
    assert np.all(np.diff(vals) < 0) and vals[-1] > 0 and vals[-1] < 1e-3
    with pytest.raises(ParameterError):
        theory.eta_star(1.0)


def test_gamma_star_examples():
    assert theory.gamma_star(1, 4, 1, 0, 100, 4) == pytest.approx(1 / 11)
    g1 = theory.gamma_star(2, 9, 0, 0, 10, 3)
    assert g1 == pytest.approx(1 / (3 * 2 * 3)) == theory.gamma_star(2, 9, 0, 0, 10_000, 3)
    assert theory.gamma_star(1, 4, 1, 0, 100, 8) > theory.gamma_star(1, 4, 1, 0, 100, 4)
    assert theory.gamma_star(1, 4, 1, 0.5, 10**8, 4) < 1e-3


def test_contraction_examples():
    assert theory.contraction_factors(RING4, 0.0) == (0.0, 0.0, 1.0)
    deep, choco, dcd = theory.contraction_factors(RING4, 0.5)
    assert (deep, choco, dcd) == pytest.approx((0.19753, 0.44444, 1.0), abs=1e-5)


def test_remainder_terms():
    r = theory.remainder_terms(9.0, 100)
    assert r == {"main_text": 0.01, "proof": 0.04}


def test_monitor_identity_trivial():
    problem = quadratic_benchmark(4)
    cfg = RunConfig("deepsqueeze", 0.01, 0.5, 30, build_ring(4))
    tr = run(cfg, problem, record_history=True)
    rep = theory.lemma_monitor(tr.history, problem, build_ring(4), 0.5, 10.0, 0.0)
    c = rep["bound_compress_error"]
    assert c.lhs == 0.0 and c.passed


def test_monitor_topk_half_ring8():
    rep, *_ = monitor_run(8, CompressorSpec.topk(16, 32))
    for name in ("bound_compress_error", "bound_diff_X", "bound_G"):
        assert rep[name].verdict == "pass", (name, rep[name])


def test_monitor_skips_when_precondition_fails():
    problem = quadratic_benchmark(4)
    W = build_ring(4)
    tr = run(RunConfig("deepsqueeze", 0.01, 0.5, 20, W, CompressorSpec.topk(2)), problem, record_history=True)
    rep = theory.lemma_monitor(tr.history, problem, W, 0.5, 10.0, 0.9)
    assert rep["bound_compress_error"].verdict.startswith("skipped: precondition")
    assert rep["bound_compress_error"].passed


def test_compress_error_constant_matches_c1_mapping():
    # with lambda(W_eff) = 1 - eta (1 - lambda(W)) the two constants coincide
    eta, a2 = 0.3, 0.05
    C0, C1, _ = theory.mixing_constants(a2, eta, RING8)
    lam_eff = 1 - eta * (1 - RING8.lambdaN)
    assert theory.compress_error_constant(a2, lam_eff) == pytest.approx(C1, rel=1e-12)
