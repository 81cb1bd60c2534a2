"""Batch command line: config in, manifest/history/certificate out.

Exit status: 0 converged, 2 iteration limit, 3 diverged, 1 invalid config,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .blocks import BlockVector, block_norm
from .config import (
    ConfigError,
    RunConfig,
    build_bundle,
    build_min_problem,
    build_schedule,
    check_config,
    load_config,
    resolve_step,
)
from .convex import dual_objective, duality_gap, primal_objective
from .frb import frb_run, product_triple
from .functions import GraphUnsupported
from .inexact import ScheduleError
from .oracles import OracleError, active_set_oracle, block_error, kkt_residual
from .solver import Seeds, StopRule, run

logger = logging.getLogger(__name__)

EXIT_CODES = {"converged": 0, "iteration_limit": 2, "diverged": 3}
EXIT_CONFIG = 1
EXIT_IO = 4
ORACLE_PATTERN_LIMIT = 20_000
DEFAULT_OUTPUT = "pdbrf-out"


@dataclass
class CliOutcome:
    exit_code: int
    status: str
    output_dir: Path
    certificate: dict = field(default_factory=dict)


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _history_header(m: int) -> list[str]:
    duals = [f"dual_residual_norm_{i}" for i in range(1, m + 1)]
    return ["n", "step_norm_sq", "cum_step_sum", "primal_residual_norm", *duals, "wall_time_ns"]


def write_history(path: Path, history, m: int, timing: bool) -> None:
    # floats go through repr so identical runs give identical bytes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_history_header(m))
        for rec in history:
            duals = [repr(float(q)) for q in rec.dual_residual_norms]
            duals += [""] * (m - len(duals))
            w.writerow(
                [
                    rec.n,
                    repr(float(rec.step_norm_sq)),
                    repr(float(rec.cumulative_step_sum)),
                    repr(float(rec.primal_residual_norm)),
                    *duals,
                    rec.wall_time_ns if timing else "",
                ]
            )


def _dump_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _initial_seeds(cfg: RunConfig, shape) -> Seeds:
    if cfg.init == "zero":
        return Seeds()
    rng = np.random.default_rng(cfg.seed)
    x_prev = BlockVector.from_flat(rng.standard_normal(shape.size), shape)
    x0 = BlockVector.from_flat(rng.standard_normal(shape.size), shape)
    return Seeds(x_prev, x0)


def manifest_dict(cfg: RunConfig, resolved: dict) -> dict:
    data = cfg.model_dump(mode="json", exclude={"output", "resolved"})
    data["resolved"] = resolved
    return data


def run_cli(cfg: RunConfig, output_dir: Optional[Path] = None) -> CliOutcome:
    """Execute a validated config and write ``manifest.json``, ``history.csv``, ``certificate.json``."""
    out = Path(output_dir or cfg.output or DEFAULT_OUTPUT)
    bundle = build_bundle(cfg)
    schedule = build_schedule(cfg)
    m = bundle.m
    step = resolve_step(cfg, bundle, schedule)
    seeds = _initial_seeds(cfg, bundle.shape)
    stop = StopRule(cfg.stop.max_iters, cfg.stop.tol)

    if cfg.solver == "frb":
        flat_seeds = tuple(None if s is None else s.flatten() for s in (seeds.x_prev, seeds.x0))
        partition = [bundle.z.size, *bundle.shape.dims_dual]
        res = frb_run(product_triple(bundle), step.gamma, flat_seeds, stop, partition=partition)
        solution = BlockVector.from_flat(res.solution, bundle.shape, check_finite=False)
    else:
        res = run(bundle, schedule, step.policy, seeds, stop)
        solution = res.solution
    status, history, error = res.status, res.history, res.error

    last = history[-1] if history else None
    cert = {
        "status": status,
        "iterations": len(history),
        "gamma": _num(step.gamma),
        "solution_norm": _num(block_norm(solution)) if solution.is_finite() else "nan",
        "kkt_residual": _num(kkt_residual(bundle, solution)) if solution.is_finite() else "nan",
        "p_norm": _num(last.primal_residual_norm) if last else None,
        "q_norms": [_num(q) for q in last.dual_residual_norms] if last else None,
        "solution": {"primal": solution.primal.tolist(), "duals": [d.tolist() for d in solution.duals]},
    }
    if error is not None:
        cert["divergence"] = {"message": error, "last_record": len(history)}
    if cfg.problem.kind == "min":
        p = build_min_problem(cfg.problem)
        for key, val in (
            ("primal_objective", primal_objective(p, solution.primal)),
            ("dual_objective", dual_objective(p, list(solution.duals))),
            ("duality_gap", duality_gap(p, solution.primal, list(solution.duals))),
        ):
            cert[key] = "unavailable" if val is None else _num(val)
    cert["oracle_distance"] = _oracle_distance(bundle, solution)

    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "manifest.json", manifest_dict(cfg, {k: _num(v) for k, v in step.as_dict().items()}))
    write_history(out / "history.csv", history, m, cfg.timing)
    _dump_json(out / "certificate.json", cert)
    return CliOutcome(EXIT_CODES[status], status, out, cert)


def _oracle_distance(bundle, solution):
    """Block distance to the active-set solution, when that oracle applies cheaply."""
    if not solution.is_finite():
        return "unavailable"
    try:
        ref = active_set_oracle(bundle, max_patterns=ORACLE_PATTERN_LIMIT)
    except (GraphUnsupported, OracleError, NotImplementedError):
        return "unavailable"
    return _num(block_error(solution, ref.point))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdbrf", description="Primal-dual backward-reflected-forward solver")
    ap.add_argument("--config", required=True, help="YAML (or JSON) run configuration")
    ap.add_argument("--max-iters", type=int, dest="max_iters")
    ap.add_argument("--tol", type=float)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--output", help="directory for manifest.json, history.csv, certificate.json")
    ap.add_argument("--solver", choices=["brf", "frb", "convex_min"])
    ap.add_argument("--timing", action="store_true", help="fill the wall_time_ns column")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    data = cfg.model_dump()
    for key in ("gamma", "epsilon", "seed", "output", "solver"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.max_iters is not None:
        data["stop"]["max_iters"] = args.max_iters
    if args.tol is not None:
        data["stop"]["tol"] = args.tol
    if args.timing:
        data["timing"] = True
    try:
        new = RunConfig.model_validate(data)
    except Exception as exc:  # pydantic ValidationError
        raise ConfigError(f"invalid command-line override: {exc}") from None
    check_config(new)
    return new


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        outcome = run_cli(cfg)
    except (ConfigError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    c = outcome.certificate
    print(f"{outcome.status}: {c['iterations']} iterations, kkt_residual={c['kkt_residual']}, output in {outcome.output_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
