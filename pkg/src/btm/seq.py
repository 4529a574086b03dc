"""Sequential baseline executor. Its final state defines correctness."""

from __future__ import annotations

import time
from typing import Any, Mapping, NamedTuple

from .core import MAX_VALUE, Balance, Block, ExecutionReport, StateKey
from .toyvm import DictView, ToyVM


class SequentialResult(NamedTuple):
    final_state: dict
    outcomes: list
    access: list
    report: ExecutionReport


def credit_coinbase(state: dict, block: Block, fees: int, lazy_coinbase: bool) -> None:
    """Apply the deferred fee credit once the whole block has run."""
    if not lazy_coinbase or fees == 0:
        return
    key = Balance(block.coinbase)
    total = state.get(key, 0) + fees
    if total > MAX_VALUE:
        raise OverflowError("coinbase credit exceeds the value range")
    state[key] = total


def run_sequential(
    block: Block,
    base: Mapping[StateKey, int],
    *,
    registry: Any = None,
    lazy_coinbase: bool = True,
) -> SequentialResult:
    t0 = time.perf_counter()
    vm = ToyVM(registry, block.coinbase, lazy_coinbase)
    state = dict(base)
    view = DictView(state)
    outcomes = []
    fees = 0
    for txn in block.transactions:
        out = vm.execute_with_tracking(txn, view)
        outcomes.append(out)
        fees += out.fee
    credit_coinbase(state, block, fees, lazy_coinbase)
    wall = (time.perf_counter() - t0) * 1000.0
    n = len(block)
    report = ExecutionReport(
        engine="seq",
        final_state=state,
        wall_ms=wall,
        threads=1,
        executions=n,
        extra={"reverts": sum(1 for o in outcomes if not o.committed)},
    )
    return SequentialResult(state, outcomes, [o.access for o in outcomes], report)
