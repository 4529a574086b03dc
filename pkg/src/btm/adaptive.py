"""Pick an executor per block from cheap conflict metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional

import numpy as np

from .core import Block, ConflictSpec, ExecutionReport, StateKey, bit_indices
from .dag_btm import run_dag
from .opt_btm import compute_independent, run_opt
from .seq import run_sequential

ENGINES = ("seq", "dag", "opt")
_DENSE_BITS = 64


def conflict_metrics(n: int, spec: ConflictSpec) -> dict:
    """Dependent-pair fraction, independent-transaction fraction and longest chain.

    The chain is the longest path (in transactions) of the dependency DAG
    built from the complement of each independence set.
    """
    if n == 0:
        return {"dependent_pair_fraction": 0.0, "independent_txn_fraction": 1.0, "longest_chain": 0}
    pairs = n * (n - 1) // 2
    dependent = sum(spec.comp_size(k) for k in range(n))
    depth = np.zeros(n, dtype=np.int64)
    for k in range(n):
        comp = spec.comp_mask(k)
        if comp == 0:
            depth[k] = 1
        elif comp.bit_count() <= _DENSE_BITS:
            depth[k] = 1 + max(int(depth[i]) for i in bit_indices(comp))
        else:
            raw = np.frombuffer(comp.to_bytes((k + 7) // 8, "little"), dtype=np.uint8)
            sel = np.unpackbits(raw, bitorder="little", count=k).astype(bool)
            depth[k] = 1 + int(depth[:k][sel].max())
    return {
        "dependent_pair_fraction": dependent / pairs if pairs else 0.0,
        "independent_txn_fraction": len(compute_independent(n, spec)) / n,
        "longest_chain": int(depth.max()),
    }


@dataclass(frozen=True)
class Policy:
    threshold_high: float = 0.5
    min_parallel_size: int = 64
    parallel_engine: str = "opt"

    def __post_init__(self) -> None:
        if self.parallel_engine not in ("dag", "opt"):
            raise ValueError("parallel_engine must be 'dag' or 'opt'")
        if not 0.0 <= self.threshold_high <= 1.0:
            raise ValueError("threshold_high must lie in [0, 1]")

    def choose(self, n: int, metrics: dict) -> str:
        if n < self.min_parallel_size or metrics["dependent_pair_fraction"] > self.threshold_high:
            return "seq"
        return self.parallel_engine


def run_adaptive(
    block: Block,
    base: Mapping[StateKey, int],
    spec: ConflictSpec,
    threads: int = 4,
    policy: Optional[Policy] = None,
    *,
    registry: Any = None,
    lazy_coinbase: bool = True,
    perturb: Optional[Callable[[], None]] = None,
) -> ExecutionReport:
    """Measure the spec, then delegate. Wall time includes the measurement."""
    policy = policy or Policy()
    n = len(block)
    t0 = time.perf_counter()
    metrics = conflict_metrics(n, spec)
    metrics_ms = (time.perf_counter() - t0) * 1000.0
    choice = policy.choose(n, metrics)
    if choice == "seq":
        inner = run_sequential(block, base, registry=registry, lazy_coinbase=lazy_coinbase).report
    elif choice == "dag":
        inner = run_dag(block, base, spec, threads, registry=registry, lazy_coinbase=lazy_coinbase, perturb=perturb)
    else:
        inner = run_opt(block, base, spec, threads, registry=registry, lazy_coinbase=lazy_coinbase, perturb=perturb)
    wall = (time.perf_counter() - t0) * 1000.0
    extra = dict(inner.extra)
    extra.update({"choice": choice, "metrics": metrics, "metrics_ms": metrics_ms})
    return ExecutionReport(
        engine="adaptive",
        final_state=inner.final_state,
        aborts=inner.aborts,
        validations=inner.validations,
        dependency_waits=inner.dependency_waits,
        re_executions=inner.re_executions,
        wall_ms=wall,
        threads=inner.threads,
        executions=inner.executions,
        extra=extra,
    )
