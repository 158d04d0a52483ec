import numpy as np
import pytest

from deepsqueeze.compression import CompressorSpec
from deepsqueeze.desk import oracle_compressors, oracle_config, quadratic_benchmark, relative_gap
from deepsqueeze.engine import RunConfig, run
from deepsqueeze.errors import ParameterError
from deepsqueeze.oracle import (closed_form, closed_form_check, consensus_decay_check, matrix_power,
                                matrix_power_eig, matrix_run, printed_form_deviation)
from deepsqueeze.problems import synth_quadratic
from deepsqueeze.topology import build_complete, build_ring, effective


@pytest.fixture(scope="module")
def bench():
    return quadratic_benchmark()


@pytest.mark.parametrize("comp", oracle_compressors(), ids=lambda c: c.label)
def test_engine_matches_matrix_replay(bench, comp):
    cfg = oracle_config(comp)
    engine = run(cfg, bench, record_history=True)
    oracle = matrix_run(cfg, bench)
    assert relative_gap(engine.history["X"], oracle.X) <= 1e-10
    assert engine.csv_text().splitlines()[0] == oracle.trace.csv_text().splitlines()[0]


def test_identity_replay_is_dpsgd_closed_form(bench):
    cfg = oracle_config(CompressorSpec.identity(), T=30)
    o = matrix_run(cfg, bench)
    assert not np.any(o.Delta)
    for t in range(30):
        np.testing.assert_allclose(o.X[t + 1], (o.X[t] - cfg.gamma * o.G[t]) @ o.W_eff, rtol=0, atol=1e-14)


def test_first_step_by_hand(bench):
    cfg = oracle_config(CompressorSpec.topk(8), T=3)
    o = matrix_run(cfg, bench)
    n = o.W_eff.shape[0]
    X1 = -cfg.gamma * o.G[0] @ o.W_eff - o.Delta[0] @ (o.W_eff - np.eye(n))
    np.testing.assert_allclose(o.X[1], X1, rtol=0, atol=1e-14)


def test_closed_form_small_cases():
    problem = synth_quadratic(4, 16, 20, 0.5, seed=3)
    cfg = RunConfig("deepsqueeze", 0.05, 0.5, 50, build_ring(4), CompressorSpec.topk(4))
    o = matrix_run(cfg, problem)
    assert closed_form_check(o, 1) == 0.0 or closed_form_check(o, 1) <= 1e-16
    assert closed_form_check(o, 50) <= 1e-9
    np.testing.assert_array_equal(closed_form(o, 0), o.X[0])


def test_closed_form_identity_any_t(bench):
    o = matrix_run(oracle_config(CompressorSpec.identity(), T=40), bench)
    assert max(closed_form_check(o, t) for t in range(41)) <= 1e-10


def test_closed_form_rejects_decay_and_range(bench):
    cfg = RunConfig("deepsqueeze", 0.05, 0.3, 6, build_ring(8), lr_decay=(2, 0.5))
    o = matrix_run(cfg, bench)
    with pytest.raises(ParameterError):
        closed_form(o, 5)
    with pytest.raises(ParameterError):
        closed_form(o, 7)


def test_printed_form_is_informational(bench):
    o = matrix_run(oracle_config(CompressorSpec.topk(8), T=20), bench)
    assert np.isfinite(printed_form_deviation(o, 20, 0.3))


def test_oracle_only_replays_deepsqueeze(bench):
    with pytest.raises(ParameterError):
        matrix_run(RunConfig("dpsgd", 0.1, 0.5, 3, build_ring(8)), bench)


def test_matrix_powers_agree():
    M = effective(build_ring(6), 0.4).entries
    for k in (0, 1, 5, 17):
        np.testing.assert_allclose(matrix_power(M, k), matrix_power_eig(M, k), atol=1e-12)


def test_consensus_decay_examples(rng):
    W8 = effective(build_ring(8), 0.5).entries
    X0 = np.tile(rng.standard_normal((5, 1)), (1, 8))
    assert np.all(consensus_decay_check(W8, X0, 10).norms <= 1e-12)
    res = consensus_decay_check(W8, rng.standard_normal((5, 8)), 40)
    assert res.ok and np.all(res.ratios <= res.bound + 1e-10)
    res = consensus_decay_check(build_complete(5).entries, rng.standard_normal((3, 5)), 3)
    assert res.norms[1] <= 1e-12
