"""Compression operators with exact wire encodings and bit accounting.

Every operator returns a :class:`CompressedMessage` whose ``decoded`` vector is
rebuilt from ``payload``; the payload is the source of truth and the engine
only ever consumes decoded payloads.

Wire layouts (big-endian, bits packed MSB-first, zero-padded to a byte):

* ``bitquant``: ``[norm f32][d x b-bit level index]``
* ``topk`` / ``randk``: ``[32-bit zero placeholder][k x (index, value f32)]``
  with ``ceil(log2 d)``-bit indices
* ``identity``: the raw float64 vector (lossless in simulation; accounted at
  the 32-bit dense baseline)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericError, ParameterError

__all__ = [
    "Kind",
    "CompressorSpec",
    "CompressedMessage",
    "compress",
    "decode",
    "bit_quantize",
    "empirical_alpha",
    "message_bits",
    "from_config",
]

DENSE_BITS = 32
NORM_BITS = 32


class Kind(str, Enum):
    IDENTITY = "identity"
    TOPK = "topk"
    RANDK = "randk"
    BITQUANT = "bitquant"


@dataclass(frozen=True)
class CompressorSpec:
    kind: Kind = Kind.IDENTITY
    k: int | None = None
    bits: int | None = None
    analytic_alpha2: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind in (Kind.TOPK, Kind.RANDK):
            if self.k is None or int(self.k) < 1:
                raise ParameterError(f"{self.kind.value} needs k >= 1, got {self.k}")
            object.__setattr__(self, "k", int(self.k))
        if self.kind is Kind.BITQUANT:
            if self.bits is None or not 1 <= int(self.bits) <= 16:
                raise ParameterError(f"bitquant needs 1 <= bits <= 16, got {self.bits}")
            object.__setattr__(self, "bits", int(self.bits))
        if self.analytic_alpha2 is not None and not 0.0 <= self.analytic_alpha2 < 1.0:
            raise ParameterError(f"analytic_alpha2 must lie in [0, 1), got {self.analytic_alpha2}")

    @classmethod
    def identity(cls):
        return cls(Kind.IDENTITY, analytic_alpha2=0.0)

    @classmethod
    def topk(cls, k, d=None):
        return cls(Kind.TOPK, k=k, analytic_alpha2=None if d is None else 1.0 - k / d)

    @classmethod
    def randk(cls, k, d=None):
        return cls(Kind.RANDK, k=k, analytic_alpha2=None if d is None else 1.0 - k / d)

    @classmethod
    def bitquant(cls, bits):
        return cls(Kind.BITQUANT, bits=bits)

    def check(self, d: int) -> None:
        if self.kind in (Kind.TOPK, Kind.RANDK) and self.k > d:
            raise ParameterError(f"k={self.k} exceeds dimension {d}")

    @property
    def label(self) -> str:
        if self.kind in (Kind.TOPK, Kind.RANDK):
            return f"{self.kind.value}{self.k}"
        if self.kind is Kind.BITQUANT:
            return f"bitquant{self.bits}"
        return "identity"


@dataclass(frozen=True, eq=False)
class CompressedMessage:
    kind: Kind
    dim: int
    payload: bytes
    decoded: np.ndarray
    bit_size: int


def index_bits(d: int) -> int:
    return math.ceil(math.log2(d)) if d > 1 else 0


def message_bits(spec: CompressorSpec, d: int) -> int:
    spec.check(d)
    if spec.kind is Kind.IDENTITY:
        return DENSE_BITS * d
    if spec.kind is Kind.BITQUANT:
        return spec.bits * d + NORM_BITS
    return spec.k * (DENSE_BITS + index_bits(d)) + NORM_BITS


# ---------------------------------------------------------------- bit packing

def _uint_bits(values, width):
    values = np.asarray(values, dtype=np.uint64)
    if width == 0:
        return np.zeros((values.size, 0), dtype=np.uint8)
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def _bits_uint(bits):
    width = bits.shape[1]
    if width == 0:
        return np.zeros(bits.shape[0], dtype=np.int64)
    weights = np.left_shift(np.uint64(1), np.arange(width - 1, -1, -1, dtype=np.uint64))
    return (bits.astype(np.uint64) * weights).sum(axis=1).astype(np.int64)


def _f32_bits(values):
    raw = np.asarray(values, dtype=">f4").tobytes()
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8)).reshape(-1, 32)


def _bits_f32(bits):
    return np.frombuffer(np.packbits(bits.reshape(-1)).tobytes(), dtype=">f4").astype(float)


def _pack(*chunks):
    stream = np.concatenate([c.reshape(-1) for c in chunks]) if chunks else np.zeros(0, np.uint8)
    return np.packbits(stream).tobytes()


def _unpack(payload):
    return np.unpackbits(np.frombuffer(payload, dtype=np.uint8))


# ---------------------------------------------------------------- quantizer

def _levels(bits):
    m = (1 << bits) - 1
    return (2.0 * np.arange(m + 1) - m) / m


def _level_indices(x, bits):
    """Nearest of the 2^b uniform levels on [-1, 1] after max-abs scaling.

    Ties go to the level nearer zero, then to the lower index.
    """
    m = (1 << bits) - 1
    s = np.max(np.abs(x)) if x.size else 0.0
    if s == 0.0:
        u = np.zeros_like(x)
    else:
        u = x / s
    pos = (u + 1.0) * m / 2.0
    lo = np.clip(np.floor(pos), 0, m).astype(np.int64)
    hi = np.minimum(lo + 1, m)
    d_lo = pos - lo
    d_hi = hi - pos
    pick_hi = d_hi < d_lo
    tie = (d_hi == d_lo) & (hi != lo)
    # level j is (2j - m)/m; compare magnitudes in integers so +-1/3 tie exactly
    pick_hi = np.where(tie, np.abs(2 * hi - m) < np.abs(2 * lo - m), pick_hi)
    return np.where(pick_hi, hi, lo)


def _norm(v):
    """Euclidean norm, scaled by max |v| to avoid under- and overflow."""
    s = float(np.max(np.abs(v))) if v.size else 0.0
    if s == 0.0 or not math.isfinite(s):
        return s
    return s * float(np.sqrt(np.sum((v / s) ** 2)))


def _rescale(q, norm):
    qn = _norm(q)
    if qn == 0.0 or norm == 0.0:
        return np.zeros_like(q)
    return q * (norm / qn)


def bit_quantize(x, bits: int) -> np.ndarray:
    """Real-valued b-bit quantizer that restores the input's Euclidean norm."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("bit_quantize received non-finite input")
    if bits < 1:
        raise ParameterError(f"bits must be >= 1, got {bits}")
    if not np.any(x):
        return np.zeros_like(x)
    q = _levels(bits)[_level_indices(x, bits)]
    return _rescale(q, _norm(x))


# ---------------------------------------------------------------- encode/decode

def _encode_bitquant(x, bits):
    norm = np.float32(_norm(x))
    idx = _level_indices(x, bits)
    return _pack(_f32_bits([norm]), _uint_bits(idx, bits))


def _decode_bitquant(payload, d, bits):
    stream = _unpack(payload)
    norm = float(_bits_f32(stream[:32])[0])
    idx = _bits_uint(stream[32:32 + bits * d].reshape(d, bits))
    return _rescale(_levels(bits)[idx], norm)


def _encode_sparse(x, support):
    w = index_bits(x.size)
    return _pack(np.zeros(NORM_BITS, np.uint8),
                 np.hstack([_uint_bits(support, w), _f32_bits(x[support])]))


def _decode_sparse(payload, d, k):
    w = index_bits(d)
    stream = _unpack(payload)[NORM_BITS:NORM_BITS + k * (w + 32)].reshape(k, w + 32)
    out = np.zeros(d)
    out[_bits_uint(stream[:, :w])] = _bits_f32(stream[:, w:])
    return out


def decode(spec: CompressorSpec, payload: bytes, d: int) -> np.ndarray:
    if spec.kind is Kind.IDENTITY:
        return np.frombuffer(payload, dtype=">f8").astype(float)
    if spec.kind is Kind.BITQUANT:
        return _decode_bitquant(payload, d, spec.bits)
    return _decode_sparse(payload, d, spec.k)


def compress(spec: CompressorSpec, x, rng: np.random.Generator | None = None) -> CompressedMessage:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("cannot compress a non-finite vector")
    d = x.size
    spec.check(d)
    if spec.kind is Kind.IDENTITY:
        payload = x.astype(">f8").tobytes()
    elif spec.kind is Kind.BITQUANT:
        payload = _encode_bitquant(x, spec.bits)
    elif spec.kind is Kind.TOPK:
        order = np.argsort(-np.abs(x), kind="stable")
        payload = _encode_sparse(x, np.sort(order[: spec.k]))
    else:
        if rng is None:
            raise ParameterError("randk needs a random stream")
        payload = _encode_sparse(x, np.sort(rng.choice(d, size=spec.k, replace=False)))
    decoded = decode(spec, payload, d)
    decoded.setflags(write=False)
    return CompressedMessage(spec.kind, d, payload, decoded, message_bits(spec, d))


def error_ratio(spec, x, rng=None) -> float:
    """||C[x] - x||^2 / ||x||^2 for one draw (0 for the zero vector)."""
    x = np.asarray(x, dtype=float)
    nx = float(x @ x)
    if nx == 0.0:
        return 0.0
    r = compress(spec, x, rng).decoded - x
    return float(r @ r) / nx


def empirical_alpha(spec: CompressorSpec, d: int, samples: int, rng: np.random.Generator):
    """Mean and max of ||C[x] - x||^2 / ||x||^2 over standard-normal draws."""
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    ratios = np.array([error_ratio(spec, rng.standard_normal(d), rng) for _ in range(samples)])
    return float(ratios.mean()), float(ratios.max())


def from_config(block: dict, d: int | None = None) -> CompressorSpec:
    kind = Kind(block.get("kind", "identity"))
    if kind is Kind.IDENTITY:
        return CompressorSpec.identity()
    if kind in (Kind.TOPK, Kind.RANDK) and d is not None and int(block["k"]) > d:
        raise ParameterError(f"k={block['k']} exceeds dimension {d}")
    if kind is Kind.TOPK:
        return CompressorSpec.topk(block["k"], d)
    if kind is Kind.RANDK:
        return CompressorSpec.randk(block["k"], d)
    return CompressorSpec.bitquant(block["bits"])


def calibrated_alpha2(spec: CompressorSpec, d: int, samples: int = 2000, seed: int = 0) -> float:
    """Pathwise alpha^2 used for schedules: the analytic bound if known, else the sampled max."""
    if spec.kind is Kind.IDENTITY:
        return 0.0
    if spec.analytic_alpha2 is not None:
        return spec.analytic_alpha2
    if spec.kind in (Kind.TOPK, Kind.RANDK):
        return 1.0 - spec.k / d
    from .rng import stream
    return empirical_alpha(spec, d, samples, stream(seed, 9, d, spec.bits or 0))[1]
