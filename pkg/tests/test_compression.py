import math
import struct

import numpy as np
import pytest

from deepsqueeze.compression import (CompressorSpec, Kind, bit_quantize, calibrated_alpha2, compress,
                                     decode, empirical_alpha, error_ratio, from_config, message_bits)
from deepsqueeze.errors import NumericError, ParameterError


# ---------------------------------------------------------------- scalar reference quantizer

def reference_quantize(x, bits):
    """Loop-based reading of the quantizer rule, used as an independent oracle."""
    levels = [-1 + 2 * j / (2**bits - 1) for j in range(2**bits)]
    s = max(abs(v) for v in x)
    if s == 0:
        return [0.0] * len(x)
    q = []
    for v in x:
        u = v / s
        best = None
        for j, lev in enumerate(levels):
            key = (abs(u - lev), abs(lev), j)
            if best is None or key < best[0]:
                best = (key, lev)
        q.append(best[1])
    qn = math.sqrt(sum(c * c for c in q))
    xn = math.sqrt(sum(v * v for v in x))
    return [c * xn / qn for c in q] if qn else [0.0] * len(x)


def test_identity_example():
    msg = compress(CompressorSpec.identity(), [2.0, -3.0])
    np.testing.assert_array_equal(msg.decoded, [2.0, -3.0])
    assert error_ratio(CompressorSpec.identity(), [2.0, -3.0]) == 0.0


def test_topk_example():
    x = np.array([3.0, -1.0, 2.0])
    msg = compress(CompressorSpec.topk(1), x)
    np.testing.assert_array_equal(msg.decoded, [3.0, 0.0, 0.0])
    r = msg.decoded - x
    assert float(r @ r) == 5.0 and float(x @ x) == 14.0
    assert error_ratio(CompressorSpec.topk(1), x) == pytest.approx(5 / 14)


def test_topk_tie_prefers_lower_index():
    np.testing.assert_array_equal(compress(CompressorSpec.topk(1), [1.0, -1.0]).decoded, [1.0, 0.0])


def test_randk_enumeration_expectation():
    x = np.array([3.0, -1.0, 2.0])
    spec = CompressorSpec.randk(1)
    outcomes = {}
    for seed in range(200):
        msg = compress(spec, x, np.random.default_rng(seed))
        support = tuple(np.flatnonzero(msg.decoded))
        outcomes[support] = error_ratio(spec, x, np.random.default_rng(seed))
    assert set(outcomes) == {(0,), (1,), (2,)}
    assert np.mean(list(outcomes.values())) == pytest.approx(2 / 3)


def test_randk_needs_rng():
    with pytest.raises(ParameterError):
        compress(CompressorSpec.randk(1), [1.0, 2.0])


def test_bitquant_single_nonzero_example():
    # Stated example. Zero is not one of the 2^b levels, so the zero entries
    # round to +-1/(2^b - 1) and this cannot hold under the level rule.
    for b in (1, 2, 4, 8):
        np.testing.assert_allclose(bit_quantize([1.0, 0.0, 0.0], b), [1.0, 0.0, 0.0])


def test_bitquant_single_nonzero_keeps_sign_and_norm():
    for b in (1, 2, 4, 8):
        out = bit_quantize([1.0, 0.0, 0.0], b)
        assert out[0] > 0 and np.argmax(np.abs(out)) == 0
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_bitquant_hand_example():
    out = bit_quantize([0.5, -1.0], 2)
    scale = math.sqrt(1.25) / math.sqrt(10 / 9)
    np.testing.assert_allclose(out, [scale / 3, -scale], rtol=1e-14)
    np.testing.assert_allclose(out, [0.35355, -1.06066], atol=1e-5)


def test_bitquant_tie_goes_toward_zero_then_lower_index():
    # u = 0 sits midway between -1/3 and 1/3: equal magnitude, so the lower index (-1/3) wins
    out = bit_quantize([1.0, 0.0, -1.0], 2)
    q = np.array([1.0, -1 / 3, -1.0])
    np.testing.assert_allclose(out, q * math.sqrt(2) / np.linalg.norm(q), rtol=1e-14)
    # u = 2/3 between 1/3 and 1: the level nearer zero wins
    np.testing.assert_allclose(reference_quantize([3.0, 2.0], 2), bit_quantize([3.0, 2.0], 2), rtol=1e-14)
    assert bit_quantize([3.0, 2.0], 2)[1] < bit_quantize([3.0, 2.0], 2)[0] / 2


@pytest.mark.parametrize("bits", [1, 2, 3, 4, 8])
def test_bitquant_matches_reference(rng, bits):
    for _ in range(20):
        x = rng.standard_normal(7)
        np.testing.assert_allclose(bit_quantize(x, bits), reference_quantize(list(x), bits), rtol=1e-12, atol=1e-14)


def test_bitquant_zero_and_nonfinite():
    np.testing.assert_array_equal(bit_quantize(np.zeros(4), 2), np.zeros(4))
    with pytest.raises(NumericError):
        bit_quantize([1.0, np.nan], 2)
    with pytest.raises(NumericError):
        compress(CompressorSpec.bitquant(2), [np.inf, 1.0])


def test_bitquant_payload_layout():
    msg = compress(CompressorSpec.bitquant(2), [0.5, -1.0])
    # [norm f32 big-endian][index 2 = 0b10][index 0 = 0b00][pad]
    assert msg.payload == struct.pack(">f", math.sqrt(1.25)) + bytes([0b1000_0000])
    assert msg.bit_size == 2 * 2 + 32
    expected = bit_quantize([0.5, -1.0], 2) * (float(np.float32(math.sqrt(1.25))) / math.sqrt(1.25))
    np.testing.assert_allclose(msg.decoded, expected, rtol=1e-15)


def test_sparse_payload_layout():
    msg = compress(CompressorSpec.topk(1), [3.0, -1.0, 2.0])
    (value_bits,) = struct.unpack(">I", struct.pack(">f", 3.0))
    stream = "0" * 32 + format(0, "02b") + format(value_bits, "032b")
    stream += "0" * (-len(stream) % 8)
    expected = int(stream, 2).to_bytes(len(stream) // 8, "big")
    assert msg.payload == expected
    assert msg.bit_size == 1 * (32 + 2) + 32


def test_decode_roundtrip(rng):
    x = rng.standard_normal(16)
    for spec in (CompressorSpec.identity(), CompressorSpec.topk(5), CompressorSpec.bitquant(3)):
        msg = compress(spec, x)
        np.testing.assert_array_equal(decode(spec, msg.payload, 16), msg.decoded)
        assert not msg.decoded.flags.writeable


def test_payload_determinism(rng):
    x = rng.standard_normal(20)
    spec = CompressorSpec.randk(4)
    a = compress(spec, x, np.random.default_rng(7)).payload
    b = compress(spec, x, np.random.default_rng(7)).payload
    assert a == b


def test_empirical_alpha_examples(rng):
    assert empirical_alpha(CompressorSpec.identity(), 8, 50, rng) == (0.0, 0.0)
    mean, _ = empirical_alpha(CompressorSpec.randk(8), 32, 10_000, rng)
    assert abs(mean - 0.75) <= 0.02
    _, worst = empirical_alpha(CompressorSpec.topk(3), 10, 2000, rng)
    assert worst <= 1 - 3 / 10 + 1e-12


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_topk_worst_case_is_equal_magnitudes(d):
    for k in range(1, d + 1):
        x = np.array([(-1.0) ** i for i in range(d)])
        assert error_ratio(CompressorSpec.topk(k), x) == pytest.approx(1 - k / d, abs=1e-12)


def test_message_bits_examples():
    d = 10**6
    b2 = message_bits(CompressorSpec.bitquant(2), d)
    assert b2 == 2 * d + 32
    assert b2 / (32 * d) == pytest.approx(0.0625, abs=1e-5)
    assert message_bits(CompressorSpec.bitquant(4), d) / (32 * d) == pytest.approx(0.125, abs=1e-5)
    assert message_bits(CompressorSpec.identity(), 100) == 3200
    assert message_bits(CompressorSpec.topk(3), 16) == 3 * (32 + 4) + 32


def test_spec_validation():
    with pytest.raises(ParameterError):
        CompressorSpec.topk(0)
    with pytest.raises(ParameterError):
        CompressorSpec.bitquant(0)
    with pytest.raises(ParameterError):
        CompressorSpec.bitquant(17)
    with pytest.raises(ParameterError):
        compress(CompressorSpec.topk(4), [1.0, 2.0])
    with pytest.raises(ParameterError):
        CompressorSpec(Kind.TOPK, k=2, analytic_alpha2=1.0)


def test_from_config_and_calibration():
    assert from_config({"kind": "topk", "k": 4}, 16).analytic_alpha2 == pytest.approx(0.75)
    assert from_config({"kind": "bitquant", "bits": 4}).bits == 4
    assert calibrated_alpha2(CompressorSpec.identity(), 8) == 0.0
    assert calibrated_alpha2(CompressorSpec.randk(2), 8) == pytest.approx(0.75)
    a2 = calibrated_alpha2(CompressorSpec.bitquant(2), 32)
    assert 0 < a2 < 1
    assert a2 == calibrated_alpha2(CompressorSpec.bitquant(2), 32)
