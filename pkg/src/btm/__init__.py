"""Parallel execution of ordered transaction blocks guided by conflict specifications."""

from .adaptive import Policy, conflict_metrics, run_adaptive
from .analyzer import (
    ContractRegistry,
    FnLabel,
    get_cset_strong,
    get_cset_weak,
    ground_truth_cset,
    label_strong,
    label_weak,
)
from .core import (
    AccessSets,
    Address,
    Balance,
    Block,
    ConflictSpec,
    ExecutionReport,
    Slot,
    TokenAllowance,
    TokenBalance,
    Transaction,
    conflict,
    read_from_conflict,
    state_hash,
)
from .dag_btm import DependencyDag, gen_dag, run_dag
from .mvmemory import MVMemory
from .opt_btm import compute_independent, run_opt
from .seq import run_sequential
from .toyvm import ToyVM
from .workloadgen import WorkloadParams, generate

__all__ = [
    "AccessSets", "Address", "Balance", "Block", "ConflictSpec", "ContractRegistry",
    "DependencyDag", "ExecutionReport", "FnLabel", "MVMemory", "Policy", "Slot",
    "TokenAllowance", "TokenBalance", "ToyVM", "Transaction", "WorkloadParams",
    "compute_independent", "conflict", "conflict_metrics", "gen_dag", "generate",
    "get_cset_strong", "get_cset_weak", "ground_truth_cset", "label_strong", "label_weak",
    "read_from_conflict", "run_adaptive", "run_dag", "run_opt", "run_sequential", "state_hash",
]
