"""TOML experiment configuration.

Layout::

    outdir = "out"
    target_loss = 0.35            # used by ``compare``

    [problem]
    kind = "quadratic"            # or "logistic"
    n_nodes = 8
    d = 32
    m_per_node = 40
    heterogeneity = 0.5
    noise_sigma = 0.0
    seed = 0

    [topology]
    kind = "ring"                 # "complete", or "edges" with edges = [[0, 1], ...]

    [compressor]
    kind = "bitquant"
    bits = 2

    [[algorithm]]
    name = "deepsqueeze"
    gamma = [1.0, 0.5, 0.1, 0.01]
    eta = "auto"                  # eta_star of the calibrated compressor
    T = 1000
    batch_size = 16
    seeds = [0, 1]

    [lr_decay]
    every = 60
    factor = 0.2

Unknown keys are rejected by name. ``topology`` may also be a bare string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import compression, topology
from .compression import CompressorSpec
from .engine import Algorithm
from .errors import ConfigError, DeepSqueezeError
from .problems import (ProblemKind, ProblemSpec, load_libsvm, logistic_from_dataset,
                       quadratic_from_dataset, synth_quadratic, synth_two_class)
from .theory import eta_star
from .topology import MixingMatrix

__all__ = ["ProblemBlock", "AlgorithmBlock", "ExperimentConfig", "load", "parse", "desk_logistic"]

TOP_KEYS = {"outdir", "target_loss", "problem", "topology", "compressor", "algorithm", "lr_decay"}
PROBLEM_KEYS = {"kind", "n_nodes", "d", "m_per_node", "heterogeneity", "noise_sigma", "seed",
                "data", "rows", "separation", "partition", "l2_reg"}
TOPOLOGY_KEYS = {"kind", "edges"}
COMPRESSOR_KEYS = {"kind", "k", "bits"}
ALGORITHM_KEYS = {"name", "gamma", "eta", "T", "batch_size", "seeds", "eval_every", "compressor"}
DECAY_KEYS = {"every", "factor"}


@dataclass(frozen=True)
class ProblemBlock:
    kind: str = "quadratic"
    n_nodes: int = 8
    d: int = 32
    m_per_node: int = 40
    heterogeneity: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    data: str | None = None
    rows: int | None = None
    separation: float = 1.0
    partition: str = "shuffled"
    l2_reg: float = 0.0

    def build(self, base: Path | None = None) -> ProblemSpec:
        kind = ProblemKind(self.kind)
        if self.data is not None:
            path = Path(self.data)
            if base is not None and not path.is_absolute():
                path = base / path
            dataset = load_libsvm(path)
        elif kind is ProblemKind.QUADRATIC:
            return synth_quadratic(self.n_nodes, self.d, self.m_per_node, self.heterogeneity,
                                   self.seed, self.noise_sigma)
        else:
            rows = self.rows if self.rows is not None else self.n_nodes * self.m_per_node
            dataset = synth_two_class(rows, self.d, self.separation, self.seed)
        if kind is ProblemKind.QUADRATIC:
            return quadratic_from_dataset(dataset, self.n_nodes, self.partition, self.seed, self.noise_sigma)
        return logistic_from_dataset(dataset, self.n_nodes, self.partition, self.seed,
                                     self.l2_reg, self.noise_sigma)


@dataclass(frozen=True)
class AlgorithmBlock:
    name: Algorithm
    gammas: tuple[float, ...]
    eta: float | str = "auto"
    T: int = 100
    batch_size: int | None = None
    seeds: tuple[int, ...] = (0,)
    eval_every: int = 1
    compressor: CompressorSpec | None = None

    def resolve_eta(self, compressor: CompressorSpec, d: int) -> float:
        if self.eta != "auto":
            return float(self.eta)
        if self.name in (Algorithm.DPSGD, Algorithm.CENTRAL):
            return 0.5
        return eta_star(math.sqrt(compression.calibrated_alpha2(compressor, d)))


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemBlock
    topology: dict
    compressor: CompressorSpec
    algorithms: tuple[AlgorithmBlock, ...]
    outdir: str = "out"
    target_loss: float | None = None
    lr_decay: tuple[int, float] | None = None
    raw: dict = field(default_factory=dict, compare=False)
    base: Path | None = field(default=None, compare=False)

    def mixing(self) -> MixingMatrix:
        return topology.from_config(self.topology, self.problem.n_nodes)

    def compressor_for(self, block: AlgorithmBlock) -> CompressorSpec:
        return block.compressor if block.compressor is not None else self.compressor


def _check_keys(block, allowed, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a table")
    for key in block:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown key '{name}'")


def _compressor(block, d, where):
    _check_keys(block, COMPRESSOR_KEYS, where)
    try:
        spec = compression.from_config(block, d)
        spec.check(d)
    except KeyError as exc:
        raise ConfigError(f"{where} is missing key {exc.args[0]!r}") from None
    except (ValueError, DeepSqueezeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return spec


def _as_tuple(value, cast, where):
    values = value if isinstance(value, list) else [value]
    if not values:
        raise ConfigError(f"{where} must be nonempty")
    try:
        return tuple(cast(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} has a bad value: {value!r}") from None


def parse(raw: dict, base: Path | None = None) -> ExperimentConfig:
    _check_keys(raw, TOP_KEYS, "")
    if "problem" not in raw:
        raise ConfigError("missing [problem] table")
    _check_keys(raw["problem"], PROBLEM_KEYS, "problem")
    try:
        problem = ProblemBlock(**raw["problem"])
        ProblemKind(problem.kind)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from None

    topo = raw.get("topology", {"kind": "ring"})
    if isinstance(topo, str):
        topo = {"kind": topo}
    _check_keys(topo, TOPOLOGY_KEYS, "topology")
    try:
        topology.from_config(topo, problem.n_nodes)
    except (ValueError, DeepSqueezeError) as exc:
        raise ConfigError(f"topology: {exc}") from None

    compressor = _compressor(raw.get("compressor", {"kind": "identity"}), problem.d, "compressor")

    blocks = raw.get("algorithm")
    if isinstance(blocks, dict):
        blocks = [blocks]
    if not blocks:
        raise ConfigError("at least one [[algorithm]] block is required")
    algorithms = []
    for idx, block in enumerate(blocks):
        where = f"algorithm[{idx}]"
        _check_keys(block, ALGORITHM_KEYS, where)
        if "name" not in block or "gamma" not in block:
            raise ConfigError(f"{where} needs 'name' and 'gamma'")
        try:
            name = Algorithm(block["name"])
        except ValueError:
            raise ConfigError(f"{where}.name: unknown algorithm {block['name']!r}") from None
        gammas = _as_tuple(block["gamma"], float, f"{where}.gamma")
        if any(not g > 0 for g in gammas):
            raise ConfigError(f"{where}.gamma must be positive")
        eta = block.get("eta", "auto")
        if eta != "auto" and not (isinstance(eta, (int, float)) and 0.0 <= eta <= 1.0):
            raise ConfigError(f"{where}.eta must be 'auto' or lie in [0, 1]")
        T = block.get("T", 100)
        eval_every = block.get("eval_every", 1)
        batch = block.get("batch_size")
        if not isinstance(T, int) or T < 1 or not isinstance(eval_every, int) or eval_every < 1:
            raise ConfigError(f"{where}: T and eval_every must be positive integers")
        if batch is not None and (not isinstance(batch, int) or batch < 1):
            raise ConfigError(f"{where}.batch_size must be a positive integer")
        override = block.get("compressor")
        algorithms.append(AlgorithmBlock(
            name=name,
            gammas=gammas,
            eta=eta,
            T=T,
            batch_size=batch,
            seeds=_as_tuple(block.get("seeds", [0]), int, f"{where}.seeds"),
            eval_every=eval_every,
            compressor=None if override is None else _compressor(override, problem.d, f"{where}.compressor"),
        ))

    decay = raw.get("lr_decay")
    if decay is not None:
        _check_keys(decay, DECAY_KEYS, "lr_decay")
        try:
            decay = (int(decay["every"]), float(decay["factor"]))
        except KeyError as exc:
            raise ConfigError(f"lr_decay is missing key {exc.args[0]!r}") from None
        if decay[0] < 1 or not decay[1] > 0:
            raise ConfigError("lr_decay needs every >= 1 and factor > 0")

    target = raw.get("target_loss")
    if target is not None and not isinstance(target, (int, float)):
        raise ConfigError("target_loss must be a number")
    return ExperimentConfig(problem, topo, compressor, tuple(algorithms), str(raw.get("outdir", "out")),
                            None if target is None else float(target), decay, raw, base)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse(raw, path.parent)


GAMMA_GRID = [1.0, 0.5, 0.1, 0.01]


def desk_logistic(seed: int = 0, T: int = 1500, eval_every: int = 1) -> dict:
    """Raw config of the 2-bit logistic benchmark on a ring of eight nodes."""
    algos = [
        {"name": name, "gamma": GAMMA_GRID, "eta": "auto", "T": T, "batch_size": 16,
         "seeds": [seed], "eval_every": eval_every}
        for name in ("deepsqueeze", "chocosgd", "dcdpsgd")
    ]
    return {
        "outdir": "out",
        "problem": {"kind": "logistic", "n_nodes": 8, "d": 32, "rows": 800, "separation": 1.0,
                    "partition": "shuffled", "l2_reg": 1e-3, "seed": seed},
        "topology": {"kind": "ring"},
        "compressor": {"kind": "bitquant", "bits": 2},
        "algorithm": algos,
    }
