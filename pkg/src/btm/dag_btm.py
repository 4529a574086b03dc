"""DAG-scheduled executor: a transaction runs once all its conservative
dependencies have committed, so nothing is ever validated or aborted."""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .core import Block, ConflictSpec, ExecutionReport, SpecError, StateKey, bit_indices
from .mvmemory import MVMemory
from .seq import credit_coinbase
from .toyvm import ToyVM


class DeadlockError(RuntimeError):
    pass


class IndegreeSaturationError(RuntimeError):
    pass


@dataclass
class DependencyDag:
    n: int
    dependents: list  # dependents[i]: ascending successor indices
    indegree: list

    def edges(self) -> int:
        return sum(len(d) for d in self.dependents)


def _coerce_spec(n: int, spec: Union[ConflictSpec, Mapping[int, Any], None]) -> ConflictSpec:
    if spec is None:
        return ConflictSpec.empty(n)
    if isinstance(spec, ConflictSpec):
        if spec.n != n:
            raise SpecError(f"spec covers {spec.n} transactions, block has {n}")
        return spec
    return ConflictSpec.from_sets(n, spec)


def gen_dag(
    n: int,
    spec: Union[ConflictSpec, Mapping[int, Any], None],
    *,
    edges: str = "complement",
    access: Optional[Sequence] = None,
    reduce: bool = False,
) -> DependencyDag:
    """Build the dependency DAG from the complement of each independence set.

    ``edges="readfrom"`` keeps only complement edges backed by an actual
    read-from conflict in ``access`` (per-transaction access sets).
    ``reduce=True`` drops transitively implied edges.
    """
    spec = _coerce_spec(n, spec)
    if edges not in ("complement", "readfrom"):
        raise ValueError(f"unknown edge mode {edges!r}")
    if edges == "readfrom":
        if access is None or len(access) != n:
            raise ValueError("read-from edges need one access set per transaction")
        writers: dict = {}
        wmask = []
        for k in range(n):
            m = 0
            for key in access[k].rset:
                m |= writers.get(key, 0)
            wmask.append(m)
            for key in access[k].wset:
                writers[key] = writers.get(key, 0) | (1 << k)
        preds = [spec.comp_mask(k) & wmask[k] for k in range(n)]
    else:
        preds = [spec.comp_mask(k) for k in range(n)]

    if reduce:
        anc = [0] * n
        for k in range(n):
            # highest remaining predecessor first: lower ones it already reaches are implied
            kept = 0
            covered = 0
            remaining = preds[k]
            while remaining:
                p = remaining.bit_length() - 1
                kept |= 1 << p
                covered |= anc[p] | (1 << p)
                remaining &= ~covered
            preds[k] = kept
            anc[k] = covered

    dependents: list = [[] for _ in range(n)]
    indegree = [0] * n
    for k in range(n):
        ps = bit_indices(preds[k])
        indegree[k] = len(ps)
        for i in ps:
            dependents[i].append(k)
    return DependencyDag(n, dependents, indegree)


class _DagView:
    __slots__ = ("mem", "k", "base", "local")

    def __init__(self, mem: MVMemory, k: int, base: Mapping):
        self.mem = mem
        self.k = k
        self.base = base
        self.local: dict = {}

    def get(self, key: StateKey) -> int:
        if key in self.local:
            return self.local[key]
        return self.mem.read_lvp(self.k, key, self.base).value

    def put(self, key: StateKey, value: int) -> None:
        self.local[key] = value


def run_dag(
    block: Block,
    base: Mapping[StateKey, int],
    spec: Union[ConflictSpec, Mapping[int, Any], None],
    threads: int = 4,
    *,
    registry: Any = None,
    lazy_coinbase: bool = True,
    edges: str = "complement",
    access: Optional[Sequence] = None,
    reduce: bool = False,
    perturb: Optional[Callable[[], None]] = None,
    trace: bool = False,
    dag: Optional[DependencyDag] = None,
) -> ExecutionReport:
    n = len(block)
    if threads < 1:
        raise ValueError("threads must be at least 1")
    t0 = time.perf_counter()
    if dag is None:
        dag = gen_dag(n, spec, edges=edges, access=access, reduce=reduce)
    vm = ToyVM(registry, block.coinbase, lazy_coinbase)
    mem = MVMemory(hook=perturb)
    indeg = list(dag.indegree)
    ready = deque(k for k in range(n) if indeg[k] == 0)
    cond = threading.Condition()
    st = {"running": 0, "committed": 0, "error": None, "seq": 0}
    start_seq = [-1] * n if trace else None
    commit_seq = [-1] * n if trace else None
    fees = [0] * n
    reverts = [0] * n

    def worker() -> None:
        while True:
            with cond:
                while True:
                    if st["error"] is not None:
                        return
                    if ready:
                        k = ready.popleft()
                        st["running"] += 1
                        if trace:
                            start_seq[k] = st["seq"]
                            st["seq"] += 1
                        break
                    if st["committed"] == n:
                        return
                    if st["running"] == 0:
                        st["error"] = DeadlockError(
                            f"cycle or unsound indegree: {n - st['committed']} transactions unreachable"
                        )
                        cond.notify_all()
                        return
                    cond.wait()
            try:
                if perturb:
                    perturb()
                view = _DagView(mem, k, base)
                out = vm.execute(block.transactions[k], view)
                for key, value in view.local.items():
                    mem.write_version(k, key, value)
                fees[k] = out.fee
                reverts[k] = 0 if out.committed else 1
                if perturb:
                    perturb()
            except BaseException as exc:  # surface worker failures to the caller
                with cond:
                    st["error"] = exc
                    cond.notify_all()
                return
            with cond:
                st["running"] -= 1
                st["committed"] += 1
                if trace:
                    commit_seq[k] = st["seq"]
                    st["seq"] += 1
                for d in dag.dependents[k]:
                    indeg[d] -= 1
                    if indeg[d] == 0:
                        ready.append(d)
                    elif indeg[d] < 0:
                        st["error"] = IndegreeSaturationError(f"indegree of {d} dropped below zero")
                cond.notify_all()

    if threads == 1 or n <= 1:
        worker()
    else:
        pool = [threading.Thread(target=worker, name=f"dag-{i}", daemon=True) for i in range(threads)]
        for th in pool:
            th.start()
        for th in pool:
            th.join()
    if st["error"] is not None:
        raise st["error"]

    state = mem.snapshot_final(n, base)
    credit_coinbase(state, block, sum(fees), lazy_coinbase)
    wall = (time.perf_counter() - t0) * 1000.0
    extra: dict = {"reverts": sum(reverts), "edges": dag.edges()}
    if trace:
        extra["start_seq"] = start_seq
        extra["commit_seq"] = commit_seq
    return ExecutionReport(
        engine="dag",
        final_state=state,
        wall_ms=wall,
        threads=threads,
        executions=n,
        extra=extra,
    )
