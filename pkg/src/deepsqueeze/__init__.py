"""Deterministic simulation of error-compensated decentralized SGD and its baselines."""

__version__ = "0.1.0"

from .compression import CompressorSpec, bit_quantize, compress, empirical_alpha, message_bits
from .engine import Algorithm, RunConfig, Trace, run, run_safe
from .errors import (ConfigError, DeepSqueezeError, DivergenceError, InfeasibleError,
                     InvalidTopologyError, NumericError, ParameterError, ParseError)
from .oracle import closed_form_check, matrix_run
from .problems import ProblemSpec, synth_quadratic, synth_two_class
from .topology import MixingMatrix, build_complete, build_from_edges, build_ring, effective, spectral

__all__ = [
    "Algorithm", "CompressorSpec", "ConfigError", "DeepSqueezeError", "DivergenceError",
    "InfeasibleError", "InvalidTopologyError", "MixingMatrix", "NumericError", "ParameterError",
    "ParseError", "ProblemSpec", "RunConfig", "Trace", "bit_quantize", "build_complete",
    "build_from_edges", "build_ring", "closed_form_check", "compress", "effective",
    "empirical_alpha", "matrix_run", "message_bits", "run", "run_safe", "spectral",
    "synth_quadratic", "synth_two_class",
]
