"""Command-line harness: generate workloads, derive specs, run and verify executors."""

from __future__ import annotations

import argparse
import csv
import json
import os
import random
import sys
import time
from pathlib import Path
from typing import Optional

from .adaptive import Policy, run_adaptive
from .analyzer import (
    ContractRegistry,
    get_cset_strong,
    get_cset_weak,
    ground_truth_from_access,
    validate_block,
)
from .core import (
    ConflictSpec,
    block_from_json,
    block_to_json,
    key_to_str,
    state_diff,
    state_from_json,
    state_hash,
    state_to_json,
)
from .dag_btm import run_dag
from .opt_btm import run_opt
from .perturb import Perturbation
from .seq import run_sequential
from .workloadgen import KINDS, Workload, WorkloadParams, generate

ENGINES = ("seq", "dag", "opt", "adaptive")
SPEC_MODES = ("weak", "strong", "ground_truth")
CSV_COLUMNS = [
    "engine", "threads", "alpha", "block_size", "repeat", "wall_ms", "tps",
    "aborts", "validations", "waits", "spec_gen_us", "state_hash", "config",
]
BLOCK_FILE, REGISTRY_FILE, BASE_FILE = "block.json", "registry.json", "base.json"


class UsageError(Exception):
    pass


# -- workload I/O -------------------------------------------------------------


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def save_workload(w: Workload, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / BLOCK_FILE, out / REGISTRY_FILE, out / BASE_FILE]
    _dump(paths[0], block_to_json(w.block))
    _dump(paths[1], w.registry.to_json())
    _dump(paths[2], state_to_json(w.base))
    return paths


def load_workload(path: Path) -> Workload:
    """Load from a directory holding the three files, or from a block file
    whose registry and base state sit next to it (both optional)."""
    d = path if path.is_dir() else path.parent
    block_path = path / BLOCK_FILE if path.is_dir() else path
    block = block_from_json(json.loads(block_path.read_text()))
    reg_path, base_path = d / REGISTRY_FILE, d / BASE_FILE
    registry = ContractRegistry.from_json(json.loads(reg_path.read_text())) if reg_path.exists() else ContractRegistry()
    base = state_from_json(json.loads(base_path.read_text())) if base_path.exists() else {}
    validate_block(block, registry)
    return Workload(block, base, registry)


def _params_from_args(a) -> WorkloadParams:
    if a.size is not None and a.size < 1:
        raise UsageError("--size must be at least 1")
    return WorkloadParams(
        kind=a.kind,
        block_size=a.size if a.size is not None else 100,
        alpha=a.alpha,
        accounts=a.accounts,
        clusters=a.clusters,
        seed=a.seed,
        synthetic_work=a.work,
        revert_rate=a.revert_rate,
        contract_fraction=a.contract_fraction,
    )


def _workload_from_args(a) -> Workload:
    if a.workload:
        return load_workload(Path(a.workload))
    return generate(_params_from_args(a))


# -- specs --------------------------------------------------------------------


def derive_spec(w: Workload, source: str, lazy_coinbase: bool):
    """Returns ``(spec, gen_us)``; ``spec`` is None for source ``none``."""
    t0 = time.perf_counter()
    n = len(w.block)
    if source == "none":
        return None, 0.0
    if source == "weak":
        spec = get_cset_weak(w.block, w.registry, lazy_coinbase=lazy_coinbase)
    elif source == "strong":
        spec = get_cset_strong(w.block, w.registry, lazy_coinbase=lazy_coinbase)
    elif source == "ground_truth":
        res = run_sequential(w.block, w.base, registry=w.registry, lazy_coinbase=lazy_coinbase)
        spec = ground_truth_from_access(res.access)
    else:
        spec = ConflictSpec.from_json(json.loads(Path(source).read_text()))
        if spec.n != n:
            raise UsageError(f"spec file covers {spec.n} transactions, block has {n}")
    return spec, (time.perf_counter() - t0) * 1e6


def _run_engine(engine: str, w: Workload, spec, threads: int, a, perturb=None, debug: bool = False):
    lazy = a.lazy_coinbase == "on"
    n = len(w.block)
    if engine == "seq":
        return run_sequential(w.block, w.base, registry=w.registry, lazy_coinbase=lazy).report
    if engine == "dag":
        access = None
        if a.edges == "readfrom":
            access = run_sequential(w.block, w.base, registry=w.registry, lazy_coinbase=lazy).access
        return run_dag(
            w.block, w.base, spec if spec is not None else ConflictSpec.empty(n), threads,
            registry=w.registry, lazy_coinbase=lazy, edges=a.edges, access=access, perturb=perturb,
        )
    if engine == "opt":
        return run_opt(w.block, w.base, spec, threads, registry=w.registry, lazy_coinbase=lazy, perturb=perturb, debug=debug)
    policy = Policy(threshold_high=a.adaptive_threshold)
    return run_adaptive(
        w.block, w.base, spec if spec is not None else ConflictSpec.empty(n), threads, policy,
        registry=w.registry, lazy_coinbase=lazy, perturb=perturb,
    )


def _diff_text(expected: dict, got: dict, limit: int = 10) -> str:
    diff = state_diff(expected, got)
    lines = [f"  {key_to_str(k)}: expected {e}, got {g}" for k, e, g in diff[:limit]]
    if len(diff) > limit:
        lines.append(f"  ... {len(diff) - limit} more keys differ")
    return "\n".join(lines)


# -- commands -----------------------------------------------------------------


def cmd_generate(a) -> int:
    w = generate(_params_from_args(a))
    for p in save_workload(w, Path(a.out)):
        print(p)
    return 0


def cmd_spec(a) -> int:
    w = _workload_from_args(a)
    spec, gen_us = derive_spec(w, a.mode, a.lazy_coinbase == "on")
    if a.out:
        _dump(Path(a.out), spec.to_json())
    print(json.dumps({
        "mode": a.mode,
        "n": spec.n,
        "gen_time_us": round(gen_us, 1),
        "tuple_fraction": spec.tuple_fraction(),
    }))
    return 0


def cmd_run(a) -> int:
    w = _workload_from_args(a)
    lazy = a.lazy_coinbase == "on"
    n = len(w.block)
    expected = state_hash(run_sequential(w.block, w.base, registry=w.registry, lazy_coinbase=lazy).final_state)
    spec, gen_us = derive_spec(w, a.spec, lazy) if a.engine != "seq" else (None, 0.0)
    config = {
        "engine": a.engine, "spec": a.spec, "threads": a.threads, "lazy_coinbase": a.lazy_coinbase,
        "edges": a.edges, "adaptive_threshold": a.adaptive_threshold,
        "time_spec_inline": a.time_spec_inline, "meta": w.block.meta,
    }
    out = open(a.csv, "w", newline="") if a.csv else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for i in range(a.warmup + a.repeats):
            rep = _run_engine(a.engine, w, spec, a.threads, a)
            h = rep.state_hash
            if h != expected:
                print(f"oracle mismatch: {a.engine} diverged from sequential execution", file=sys.stderr)
                return 1
            if i < a.warmup:
                continue
            wall = rep.wall_ms + (gen_us / 1000.0 if a.time_spec_inline else 0.0)
            writer.writerow({
                "engine": a.engine,
                "threads": rep.threads,
                "alpha": w.block.meta.get("alpha", ""),
                "block_size": n,
                "repeat": i - a.warmup,
                "wall_ms": f"{wall:.3f}",
                "tps": f"{n / (wall / 1000.0):.1f}" if wall > 0 else "inf",
                "aborts": rep.aborts,
                "validations": rep.validations,
                "waits": rep.dependency_waits,
                "spec_gen_us": f"{gen_us:.1f}",
                "state_hash": h,
                "config": json.dumps(config, sort_keys=True),
            })
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _inject_unsound(spec: ConflictSpec, truth: ConflictSpec, count: int, seed: int) -> tuple:
    """Claim full independence for ``count`` transactions that truly depend on a predecessor."""
    victims = [k for k in range(truth.n) if not truth.covers_all_predecessors(k)]
    chosen = sorted(random.Random(seed).sample(victims, min(count, len(victims))))
    for k in chosen:
        spec = spec.with_independent(k)
    return spec, chosen


def cmd_verify(a) -> int:
    w = _workload_from_args(a)
    lazy = a.lazy_coinbase == "on"
    seq = run_sequential(w.block, w.base, registry=w.registry, lazy_coinbase=lazy)
    expected = seq.final_state
    spec, _ = derive_spec(w, a.spec, lazy)
    debug = a.debug
    if a.inject_unsound:
        truth = ground_truth_from_access(seq.access)
        spec, chosen = _inject_unsound(spec or ConflictSpec.empty(len(w.block)), truth, a.inject_unsound, a.seed)
        debug = True
        print(f"injected unsound independence claims for transactions {chosen}")
    engines = [e.strip() for e in a.engines.split(",") if e.strip()]
    threads_list = [int(t) for t in a.threads_list.split(",")]
    failures = 0
    runs = 0
    for engine in engines:
        if engine not in ENGINES:
            raise UsageError(f"unknown engine {engine!r}")
        for threads in threads_list:
            for s in range(a.seeds):
                perturb = Perturbation(s) if a.perturb else None
                rep = _run_engine(engine, w, spec, threads, a, perturb=perturb, debug=debug)
                runs += 1
                violations = rep.extra.get("violations") or []
                if violations:
                    failures += 1
                    print(f"FAIL {engine} threads={threads} seed={s}: spec violations at {violations}")
                if rep.final_state != expected:
                    failures += 1
                    print(f"FAIL {engine} threads={threads} seed={s}: state diverged")
                    print(_diff_text(expected, rep.final_state))
                    print(f"{failures} failure(s) in {runs} runs")
                    return 1
    print(f"{'FAIL' if failures else 'PASS'}: {runs} runs, {failures} failure(s)")
    return 1 if failures else 0


# -- parser -------------------------------------------------------------------


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("BTM_THREADS", "4")))
    except ValueError:
        return 4


def _add_workload_args(p: argparse.ArgumentParser, positional: bool = True) -> None:
    if positional:
        p.add_argument("workload", nargs="?", help="workload directory or block JSON file; generated when omitted")
    g = p.add_argument_group("workload generation")
    g.add_argument("--kind", choices=KINDS, default="erc20")
    g.add_argument("--size", type=int, default=None, help="block size (default 100)")
    g.add_argument("--alpha", type=float, default=1.0, help="Pareto tail factor; larger means more conflicts")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--accounts", type=int, default=None)
    g.add_argument("--clusters", type=int, default=None)
    g.add_argument("--work", type=int, default=2000, help="synthetic work per transaction")
    g.add_argument("--revert-rate", type=float, default=0.0)
    g.add_argument("--contract-fraction", type=float, default=0.0)


def _add_exec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lazy-coinbase", choices=("on", "off"), default="on")
    p.add_argument("--edges", choices=("complement", "readfrom"), default="complement")
    p.add_argument("--adaptive-threshold", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write block, registry and base-state JSON")
    _add_workload_args(p, positional=False)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("spec", help="derive a conflict specification")
    _add_workload_args(p)
    p.add_argument("--mode", choices=SPEC_MODES, default="weak")
    p.add_argument("--out", help="write the spec JSON here")
    p.add_argument("--lazy-coinbase", choices=("on", "off"), default="on")
    p.set_defaults(func=cmd_spec)

    p = sub.add_parser("run", help="time an executor and emit CSV rows")
    _add_workload_args(p)
    _add_exec_args(p)
    p.add_argument("--engine", choices=ENGINES, default="dag")
    p.add_argument("--spec", default="weak", help="weak, strong, ground_truth, none or a spec JSON file")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--csv", help="CSV output path (default stdout)")
    p.add_argument("--time-spec-inline", action="store_true", help="add spec derivation time to wall_ms")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check executors against sequential execution")
    _add_workload_args(p)
    _add_exec_args(p)
    p.add_argument("--engines", default="dag,opt,adaptive")
    p.add_argument("--spec", default="weak")
    p.add_argument("--seeds", type=int, default=3, help="schedule seeds per engine and thread count")
    p.add_argument("--threads-list", default="1,2,4,8")
    p.add_argument("--no-perturb", dest="perturb", action="store_false")
    p.add_argument("--debug", action="store_true", help="re-validate independent transactions")
    p.add_argument("--inject-unsound", type=int, default=0, metavar="N",
                   help="corrupt the spec for N dependent transactions (implies --debug)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    if getattr(a, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    if getattr(a, "repeats", 1) < 1 or getattr(a, "warmup", 0) < 0:
        parser.error("--repeats must be positive and --warmup non-negative")
    try:
        return a.func(a)
    except UsageError as exc:
        parser.error(str(exc))
    except ValueError as exc:
        parser.error(str(exc))
    return 2
