"""Command line front end: ``deepsqueeze run|compare|spectrum|calibrate-alpha|verify``.

Exit codes: 0 success, 1 configuration error, 2 some cell diverged,
3 verification failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import functools
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, desk, theory
from . import rng as rngmod
from .compression import CompressorSpec, calibrated_alpha2, empirical_alpha
from .engine import Algorithm, RunConfig, Trace, run_safe
from .errors import ConfigError, DeepSqueezeError
from .problems import constants as problem_constants
from .topology import build_complete, build_from_edges, build_ring, spectral

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _fmt_gamma(g: float) -> str:
    return f"{g:g}"


@functools.lru_cache(maxsize=None)
def _alpha2(spec: CompressorSpec, d: int) -> float:
    return calibrated_alpha2(spec, d)


@dataclass
class Cell:
    algorithm: Algorithm
    gamma: float
    seed: int
    eta: float
    compressor: CompressorSpec
    config: RunConfig
    trace: Trace | None = None

    @property
    def filename(self) -> str:
        return f"{self.algorithm.value}_{_fmt_gamma(self.gamma)}_{self.seed}.csv"


def _cells(exp: cfgmod.ExperimentConfig, W, d):
    for block in exp.algorithms:
        comp = exp.compressor_for(block)
        eta = block.resolve_eta(comp, d)
        for gamma in block.gammas:
            for seed in block.seeds:
                rc = RunConfig(block.name, gamma, eta, block.T, W, comp, block.batch_size, seed,
                               block.eval_every, exp.lr_decay)
                yield Cell(block.name, gamma, seed, eta, comp, rc)


def _cell_theory(cell: Cell, W_spec, L, d):
    uses_compressor = cell.algorithm not in (Algorithm.DPSGD, Algorithm.CENTRAL)
    a2 = _alpha2(cell.compressor, d) if uses_compressor else 0.0
    eta = cell.eta
    try:
        tc = theory.constants(a2, eta, W_spec, L, cell.gamma)
    except (ValueError, DeepSqueezeError) as exc:
        return {"alpha2": a2, "eta": eta, "gamma": cell.gamma, "L": L,
                "lambda2_W": W_spec.lambda2, "lambdaN_W": W_spec.lambdaN,
                "C0": eta * (1.0 - W_spec.lambdaN), "feasible": False, "error": str(exc)}
    out = tc.to_dict()
    out["remainder_terms"] = theory.remainder_terms(tc.C2, cell.config.T)
    return out


def _execute(exp: cfgmod.ExperimentConfig, outdir: Path):
    problem = exp.problem.build(exp.base)
    W = exp.mixing()
    d = problem.dim
    cells = list(_cells(exp, W, d))
    for cell in cells:
        cell.trace = run_safe(cell.config, problem)
        _atomic_write(outdir / cell.filename, cell.trace.csv_text())

    batch = exp.algorithms[0].batch_size
    pc = problem_constants(problem, rng=rngmod.stream(exp.problem.seed, rngmod.PROBE, 0, 0),
                           batch_size=batch if batch is not None else max(problem.m(i) for i in range(problem.n_nodes)))
    W_spec = spectral(W)
    manifest = {
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config": exp.raw,
        "problem_constants": dict(pc.to_dict(), batch_size=batch),
        "spectrum": list(W_spec.eigenvalues),
        "cells": [],
    }
    for cell in cells:
        tr = cell.trace
        bs = cell.config.batch_size
        epoch = max(math.ceil(problem.m(i) / bs) if bs else 1 for i in range(problem.n_nodes))
        manifest["cells"].append({
            "algorithm": cell.algorithm.value,
            "gamma": cell.gamma,
            "seed": cell.seed,
            "eta": cell.eta,
            "T": cell.config.T,
            "batch_size": bs,
            "compressor": cell.compressor.label,
            "rounds_per_epoch": epoch,
            "csv": cell.filename,
            "status": tr.status,
            "diverged_at": tr.diverged_at,
            "final": asdict(tr.final),
            "theory": _cell_theory(cell, W_spec, pc.L, d),
        })
    _atomic_write(outdir / "manifest.json", json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return cells


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _load(args):
    if args.preset == "desk":
        exp = cfgmod.parse(cfgmod.desk_logistic())
    elif args.config is None:
        raise ConfigError("--config is required")
    else:
        exp = cfgmod.load(args.config)
    outdir = Path(args.outdir if args.outdir is not None else exp.outdir)
    return exp, outdir


def _status(cells) -> int:
    return EXIT_DIVERGED if any(c.trace.status != "ok" for c in cells) else EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    exp, outdir = _load(args)
    cells = _execute(exp, outdir)
    for c in cells:
        print(f"{c.filename},{c.trace.status}")
    return _status(cells)


def _first_hit(trace: Trace, target):
    for r in trace.records:
        if r.loss <= target:
            return r.t, r.bits_cum
    return None


def _mean_str(values):
    v = float(np.mean(values))
    return str(int(v)) if v.is_integer() else repr(v)


def comparison_rows(cells, target):
    """Rows of ``comparison.csv`` (algorithms in first-seen order)."""
    by_algo: dict = {}
    for c in cells:
        by_algo.setdefault(c.algorithm, {}).setdefault(c.gamma, []).append(c)
    rows = []
    for algo, grid in by_algo.items():
        def score(group):
            losses = [c.trace.final.loss if c.trace.status == "ok" else math.inf for c in group]
            return float(np.mean(losses))
        gamma, group = min(grid.items(), key=lambda kv: (score(kv[1]), -kv[0]))
        final = score(group)
        if not math.isfinite(final):
            rows.append((algo.value, "", "inf", "", ""))
            continue
        hits = [_first_hit(c.trace, target) for c in group] if target is not None else [None]
        if all(h is not None for h in hits):
            iters = _mean_str([h[0] for h in hits])
            bits = _mean_str([h[1] for h in hits])
        else:
            iters = bits = ""
        rows.append((algo.value, _fmt_gamma(gamma), repr(final), iters, bits))
    return rows


def cmd_compare(args) -> int:
    exp, outdir = _load(args)
    if len(exp.algorithms) < 2:
        raise ConfigError("compare needs at least two [[algorithm]] blocks")
    cells = _execute(exp, outdir)
    target = exp.target_loss
    if target is None and args.preset == "desk":
        target = desk_target(exp)
    lines = ["algo,gamma,final_loss,iters_to_target,bits_to_target"]
    lines += [",".join(r) for r in comparison_rows(cells, target)]
    text = "\n".join(lines) + "\n"
    _atomic_write(outdir / "comparison.csv", text)
    sys.stdout.write(text)
    return _status(cells)


def desk_target(exp: cfgmod.ExperimentConfig, fraction: float = 0.05) -> float:
    """Central SGD's final loss plus ``fraction`` of its initial gap."""
    problem = exp.problem.build(exp.base)
    block = exp.algorithms[0]
    rc = RunConfig(Algorithm.CENTRAL, 0.5, 0.5, block.T, exp.mixing(), batch_size=block.batch_size,
                   seed=block.seeds[0], eval_every=block.T)
    fc = run_safe(rc, problem).final.loss
    f0 = problem.loss(np.zeros(problem.dim))
    return fc + fraction * (f0 - fc)


def _mixing_from_args(args):
    if args.ring is not None:
        return build_ring(args.ring)
    if args.complete is not None:
        return build_complete(args.complete)
    if args.edges is not None:
        if args.nodes is None:
            raise ConfigError("--edges needs --nodes")
        pairs = [tuple(int(v) for v in e.split("-")) for e in args.edges.split(",") if e]
        return build_from_edges(args.nodes, pairs)
    if args.config is not None:
        return cfgmod.load(args.config).mixing()
    raise ConfigError("give one of --ring, --complete, --edges or --config")


def cmd_spectrum(args) -> int:
    W = _mixing_from_args(args)
    for v in spectral(W).eigenvalues:
        print(repr(round(float(v), 14)))
    return EXIT_OK


def cmd_calibrate_alpha(args) -> int:
    if args.randk is not None:
        spec = CompressorSpec.randk(args.randk)
    elif args.topk is not None:
        spec = CompressorSpec.topk(args.topk)
    elif args.bits is not None:
        spec = CompressorSpec.bitquant(args.bits)
    else:
        spec = CompressorSpec.identity()
    spec.check(args.dim)
    mean, worst = empirical_alpha(spec, args.dim, args.samples, rngmod.stream(args.seed, rngmod.PROBE, args.dim))
    print("compressor,dim,samples,mean_ratio,max_ratio")
    print(f"{spec.label},{args.dim},{args.samples},{mean!r},{worst!r}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.preset != "desk":
        raise ConfigError("verify supports --preset desk")
    rows, table = desk.verify_rows()
    report = ["check,value,bound,status"] + [r.line() for r in rows]
    consts = ["constant,value"] + [f"{k},{';'.join(v) if isinstance(v, list) else v!r}" for k, v in table.items()]
    sys.stdout.write("\n".join(report) + "\n\n" + "\n".join(consts) + "\n")
    if args.outdir is not None:
        out = Path(args.outdir)
        _atomic_write(out / "verify.csv", "\n".join(report) + "\n")
        _atomic_write(out / "constants.csv", "\n".join(consts) + "\n")
    return EXIT_OK if all(r.status != "FAIL" for r in rows) else EXIT_VERIFY


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsqueeze", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", cmd_run), ("compare", cmd_compare)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--outdir")
        p.add_argument("--preset", choices=["desk"])
        p.set_defaults(func=fn)

    p = sub.add_parser("spectrum")
    p.add_argument("--ring", type=int)
    p.add_argument("--complete", type=int)
    p.add_argument("--edges", help="comma separated i-j pairs")
    p.add_argument("--nodes", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("calibrate-alpha")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--randk", type=int)
    group.add_argument("--topk", type=int)
    group.add_argument("--bits", type=int)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate_alpha)

    p = sub.add_parser("verify")
    p.add_argument("--preset", choices=["desk"], default="desk")
    p.add_argument("--outdir")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, DeepSqueezeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
