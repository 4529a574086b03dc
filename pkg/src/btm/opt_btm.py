"""Optimistic executor with estimate-based waiting, read-set validation and
validation skipping for transactions independent of all predecessors.

Scheduling follows the usual execution-index / validation-index design.
All scheduler state lives behind one condition variable; transaction
bodies and read-set validation run outside it against :class:`MVMemory`.
Commits happen in index order: a transaction commits once every
predecessor has committed and its reads are known to match final memory.
"""

from __future__ import annotations

import threading
import time
from typing import Any, Callable, Mapping, Optional, Union

from .core import Block, ConflictSpec, ExecutionReport, SpecError, StateKey
from .mvmemory import MVMemory
from .seq import credit_coinbase
from .toyvm import ToyVM

READY = "ready"
EXECUTING = "executing"
EXECUTED = "executed"
ABORTING = "aborting"
COMMITTED = "committed"

DEFAULT_INCARNATION_CAP = 1000


class LivelockError(RuntimeError):
    pass


class SchedulerStall(RuntimeError):
    pass


def compute_independent(n: int, spec: Optional[ConflictSpec]) -> frozenset:
    """Indices whose independence set covers every predecessor and is complete."""
    if spec is None:
        return frozenset()
    if spec.n != n:
        raise SpecError(f"spec covers {spec.n} transactions, block has {n}")
    return frozenset(k for k in range(n) if spec.complete[k] and spec.covers_all_predecessors(k))


class _EstimateHit(Exception):
    def __init__(self, writer: int):
        super().__init__(writer)
        self.writer = writer


class _OptView:
    """Read path for one incarnation. Records (source, value) per key read.

    Transactions treated as independent read the pre-block state directly:
    no predecessor writes anything they read, so that is exactly what a
    sequential run would show them, and speculative writes of predecessors
    cannot leak in.
    """

    __slots__ = ("mem", "k", "base", "from_base", "hook", "reads", "local")

    def __init__(self, mem: MVMemory, k: int, base: Mapping, from_base: bool, hook):
        self.mem = mem
        self.k = k
        self.base = base
        self.from_base = from_base
        self.hook = hook
        self.reads: dict = {}
        self.local: dict = {}

    def get(self, key: StateKey) -> int:
        if key in self.local:
            return self.local[key]
        if self.from_base:
            if self.hook:
                self.hook()
            v = self.base.get(key, 0)
            self.reads[key] = (None, v)
            return v
        r = self.mem.read_lvp(self.k, key, self.base)
        if r.estimate:
            raise _EstimateHit(r.source)
        self.reads[key] = (r.source, r.value)
        return r.value

    def put(self, key: StateKey, value: int) -> None:
        self.local[key] = value


class _OptRun:
    def __init__(
        self,
        block: Block,
        base: Mapping,
        spec: Optional[ConflictSpec],
        threads: int,
        registry: Any,
        lazy_coinbase: bool,
        perturb: Optional[Callable[[], None]],
        debug: bool,
        incarnation_cap: int,
    ):
        n = len(block)
        self.n = n
        self.block = block
        self.base = base
        self.threads = threads
        self.vm = ToyVM(registry, block.coinbase, lazy_coinbase)
        self.mem = MVMemory(hook=perturb)
        self.perturb = perturb
        self.debug = debug
        self.cap = incarnation_cap
        self.independent = compute_independent(n, spec)
        self.indep_active = [k in self.independent for k in range(n)]

        self.cond = threading.Condition()
        self.status = [READY] * n
        self.inc = [0] * n
        self.reads: list = [None] * n
        self.last_writes: list = [frozenset()] * n
        self.fees = [0] * n
        self.reverted = [False] * n
        self.waiting: list = [[] for _ in range(n)]
        self.final_ok = [-1] * n
        self.exec_idx = 0
        self.val_idx = 0
        self.commit_idx = 0
        self.active = 0
        self.error: Optional[BaseException] = None

        self.executions = 0
        self.validations = 0
        self.commit_validations = 0
        self.debug_validations = 0
        self.aborts = 0
        self.dependency_waits = 0
        self.txn_validations = [0] * n
        self.txn_aborts = [0] * n
        self.violations: list = []

    # -- scheduler (all called with the lock held) -------------------------

    def _skips_validation(self, k: int) -> bool:
        return self.indep_active[k]

    def _pick(self):
        while self.val_idx < self.exec_idx:
            k = self.val_idx
            self.val_idx += 1
            if self.status[k] == EXECUTED and not self._skips_validation(k):
                return ("validate", k, self.inc[k], self.commit_idx >= k)
        while self.exec_idx < self.n:
            k = self.exec_idx
            self.exec_idx += 1
            if self.status[k] == READY:
                self.status[k] = EXECUTING
                return ("execute", k, self.inc[k])
        return None

    def _next_task(self):
        with self.cond:
            while True:
                if self.error is not None or self.commit_idx == self.n:
                    return None
                task = self._pick()
                if task is not None:
                    self.active += 1
                    return task
                if self.active == 0:
                    before = (self.commit_idx, self.exec_idx, self.val_idx)
                    self._try_commit()
                    if (self.commit_idx, self.exec_idx, self.val_idx) != before:
                        continue
                    raise SchedulerStall(
                        f"no runnable work with {self.n - self.commit_idx} transactions uncommitted"
                    )
                self.cond.wait()

    def _bump_incarnation(self, k: int) -> None:
        self.inc[k] += 1
        if self.inc[k] > self.cap:
            raise LivelockError(f"livelock: transaction {k} exceeded {self.cap} incarnations")

    def _abort(self, k: int) -> None:
        self.aborts += 1
        self.txn_aborts[k] += 1
        self.status[k] = ABORTING
        self.mem.mark_estimates(k, self.last_writes[k])
        self._bump_incarnation(k)
        self.status[k] = READY
        self.val_idx = min(self.val_idx, k + 1)
        self.exec_idx = min(self.exec_idx, k)

    def _add_dependency(self, k: int, writer: int) -> bool:
        """Park ``k`` until ``writer`` next finishes executing.

        Returns False when the writer has already finished, in which case
        the caller re-executes right away.
        """
        if self.status[writer] in (EXECUTED, COMMITTED):
            return False
        self.status[k] = ABORTING
        self.waiting[writer].append(k)
        self.dependency_waits += 1
        return True

    def _try_commit(self) -> None:
        while self.commit_idx < self.n:
            k = self.commit_idx
            if self.status[k] != EXECUTED:
                return
            if self.indep_active[k]:
                if self.debug:
                    self.debug_validations += 1
                    if not self._validate_reads(k, self.reads[k]):
                        self.violations.append(k)
                        self.indep_active[k] = False
                        self._abort(k)
                        self.cond.notify_all()
                        return
            elif self.final_ok[k] != self.inc[k]:
                self.validations += 1
                self.commit_validations += 1
                self.txn_validations[k] += 1
                if not self._validate_reads(k, self.reads[k]):
                    self._abort(k)
                    self.cond.notify_all()
                    return
            self.status[k] = COMMITTED
            self.commit_idx += 1
        self.cond.notify_all()

    # -- worker side -------------------------------------------------------

    def _validate_reads(self, k: int, reads: dict) -> bool:
        mem, base = self.mem, self.base
        for key, (source, value) in reads.items():
            r = mem.read_lvp(k, key, base)
            if r.estimate or r.source != source or r.value != value:
                return False
        return True

    def _execute(self, k: int, inc: int):
        txn = self.block.transactions[k]
        while True:
            if self.perturb:
                self.perturb()
            view = _OptView(self.mem, k, self.base, self.indep_active[k], self.perturb)
            try:
                out = self.vm.execute(txn, view)
            except _EstimateHit as hit:
                with self.cond:
                    self.executions += 1
                    if self._add_dependency(k, hit.writer):
                        self.active -= 1
                        self.cond.notify_all()
                        return None
                continue
            break
        wrote_new = self.mem.record(k, view.local, self.last_writes[k])
        with self.cond:
            self.executions += 1
            self.reads[k] = view.reads
            self.last_writes[k] = frozenset(view.local)
            self.fees[k] = out.fee
            self.reverted[k] = not out.committed
            self.status[k] = EXECUTED
            resumed = self.waiting[k]
            if resumed:
                self.waiting[k] = []
                for d in resumed:
                    self._bump_incarnation(d)
                    self.status[d] = READY
                self.exec_idx = min(self.exec_idx, min(resumed))
            follow = None
            if self.indep_active[k]:
                if wrote_new:
                    self.val_idx = min(self.val_idx, k + 1)
            elif self.val_idx > k:
                if wrote_new:
                    self.val_idx = k
                else:
                    follow = ("validate", k, inc, self.commit_idx >= k)
            self._try_commit()
            if follow is None:
                self.active -= 1
            return follow

    def _validate(self, k: int, inc: int, after_prefix: bool):
        reads = self.reads[k]
        ok = reads is not None and self._validate_reads(k, reads)
        with self.cond:
            self.validations += 1
            self.txn_validations[k] += 1
            if self.status[k] == EXECUTED and self.inc[k] == inc:
                if not ok:
                    self._abort(k)
                elif after_prefix:
                    self.final_ok[k] = inc
            self._try_commit()
            self.active -= 1
            self.cond.notify_all()
        return None

    def worker(self) -> None:
        try:
            task = None
            while True:
                if task is None:
                    task = self._next_task()
                    if task is None:
                        return
                if task[0] == "execute":
                    task = self._execute(task[1], task[2])
                else:
                    task = self._validate(task[1], task[2], task[3])
        except BaseException as exc:  # surface worker failures to the caller
            with self.cond:
                if self.error is None:
                    self.error = exc
                self.cond.notify_all()

    def run(self) -> dict:
        if self.n == 0:
            return dict(self.base)
        if self.threads == 1:
            self.worker()
        else:
            pool = [threading.Thread(target=self.worker, name=f"opt-{i}", daemon=True) for i in range(self.threads)]
            for th in pool:
                th.start()
            for th in pool:
                th.join()
        if self.error is not None:
            raise self.error
        return self.mem.snapshot_final(self.n, self.base)


def run_opt(
    block: Block,
    base: Mapping[StateKey, int],
    spec: Union[ConflictSpec, None],
    threads: int = 4,
    *,
    registry: Any = None,
    lazy_coinbase: bool = True,
    perturb: Optional[Callable[[], None]] = None,
    debug: bool = False,
    incarnation_cap: int = DEFAULT_INCARNATION_CAP,
) -> ExecutionReport:
    """Run ``block`` optimistically. ``spec=None`` means no independence is known.

    ``debug=True`` also validates transactions the spec claims independent,
    recording violations in ``extra["violations"]`` and re-executing them
    conventionally instead of committing a wrong result.
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    t0 = time.perf_counter()
    run = _OptRun(block, base, spec, threads, registry, lazy_coinbase, perturb, debug, incarnation_cap)
    state = run.run()
    credit_coinbase(state, block, sum(run.fees), lazy_coinbase)
    wall = (time.perf_counter() - t0) * 1000.0
    n = len(block)
    return ExecutionReport(
        engine="opt",
        final_state=state,
        aborts=run.aborts,
        validations=run.validations,
        dependency_waits=run.dependency_waits,
        re_executions=max(run.executions - n, 0),
        wall_ms=wall,
        threads=threads,
        executions=run.executions,
        extra={
            "reverts": sum(run.reverted),
            "independent": len(run.independent),
            "commit_validations": run.commit_validations,
            "debug_validations": run.debug_validations,
            "violations": list(run.violations),
            "txn_validations": run.txn_validations,
            "txn_aborts": run.txn_aborts,
        },
    )
