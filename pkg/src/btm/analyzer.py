"""Conflict-specification derivation.

The weak analyzer only understands native payments and token operations on
well-formed token contracts; anything else is assumed to conflict with
everything. The strong analyzer additionally labels contract functions by
which opcodes are reachable through the declared call graph.

Both analyzers build independence sets incrementally with per-address
bitmasks instead of looping over transaction pairs: for each transaction
the set of earlier transactions it may conflict with is an OR of a few
masks, which keeps derivation near-linear in practice.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

from .core import (
    Address,
    Block,
    ConflictSpec,
    ContractCall,
    NativePayment,
    StateKey,
    TokenApprove,
    TokenTransfer,
    TokenTransferFrom,
    Transaction,
    parse_address,
)

EXIT_OPCODES = frozenset({"CALL", "SELFDESTRUCT", "CREATE", "CREATE2"})
STATIC_EXIT_OPCODES = frozenset({"STATICCALL", "BALANCE"})
KNOWN_OPCODES = EXIT_OPCODES | STATIC_EXIT_OPCODES | {"SLOAD", "SSTORE", "LOG"}

SIG_TRANSFER = "a9059cbb"
SIG_TRANSFER_FROM = "23b872dd"
SIG_APPROVE = "095ea7b3"

DYNAMIC = "dynamic"


class FnLabel(str, enum.Enum):
    SIMPLE_PAYMENT = "SimplePayment"
    TRANSFER = "Transfer"
    TRANSFER_FROM = "TransferFrom"
    APPROVE = "Approve"
    INSIDE_CONTRACT = "InsideContract"
    STATIC_EXITS_CONTRACT = "StaticExitsContract"
    EXITS_CONTRACT = "ExitsContract"


_DESIGNATED = {
    SIG_TRANSFER: FnLabel.TRANSFER,
    SIG_TRANSFER_FROM: FnLabel.TRANSFER_FROM,
    SIG_APPROVE: FnLabel.APPROVE,
}
_TOKEN_LABELS = {
    TokenTransfer: FnLabel.TRANSFER,
    TokenTransferFrom: FnLabel.TRANSFER_FROM,
    TokenApprove: FnLabel.APPROVE,
}


def selector(name: str) -> str:
    """Deterministic 8-hex-digit function selector for a function name."""
    return hashlib.sha256(name.encode()).hexdigest()[:8]


@dataclass(frozen=True)
class FunctionDef:
    sig: str
    body: tuple = ()
    opcodes: frozenset = frozenset()
    calls: tuple = ()  # (Address or None for a dynamic target, sig)
    name: str = ""


@dataclass
class ContractDef:
    address: Address
    erc20: bool = False
    functions: dict = field(default_factory=dict)
    name: str = ""


class ContractRegistry:
    """Declared contracts: function bodies, opcode sets and call edges."""

    def __init__(self, contracts: Iterable[ContractDef] = ()):
        self.contracts: dict = {}
        self._reach_cache: dict = {}
        for c in contracts:
            self.add(c)

    def add(self, contract: ContractDef) -> None:
        self.contracts[contract.address] = contract
        self._reach_cache.clear()

    def __contains__(self, addr: Address) -> bool:
        return addr in self.contracts

    def __len__(self) -> int:
        return len(self.contracts)

    def function(self, contract: Address, sig: str) -> Optional[FunctionDef]:
        c = self.contracts.get(contract)
        if c is None:
            return None
        return c.functions.get(sig)

    def is_erc20(self, addr: Address) -> bool:
        c = self.contracts.get(addr)
        return c is not None and c.erc20

    # -- reachability -------------------------------------------------------

    def reach(self, contract: Address, sig: str):
        """``(opcodes, contracts, dynamic)`` reachable from a function.

        ``dynamic`` is True when a dynamic call edge or an undeclared callee
        is reachable. ``contracts`` excludes the starting contract.
        """
        key = (contract, sig)
        hit = self._reach_cache.get(key)
        if hit is not None:
            return hit
        opcodes: set = set()
        contracts: set = set()
        dynamic = False
        seen = {key}
        stack = [key]
        while stack:
            c, s = stack.pop()
            fn = self.function(c, s)
            if fn is None:
                dynamic = True
                continue
            opcodes |= fn.opcodes
            for target, callee in fn.calls:
                if target is None:
                    dynamic = True
                    continue
                if target != contract:
                    contracts.add(target)
                nxt = (target, callee)
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        result = (frozenset(opcodes), frozenset(contracts), dynamic)
        self._reach_cache[key] = result
        return result

    # -- JSON ---------------------------------------------------------------

    def to_json(self) -> dict:
        out = {}
        for addr in sorted(self.contracts):
            c = self.contracts[addr]
            fns = {}
            for sig in sorted(c.functions):
                f = c.functions[sig]
                entry: dict = {
                    "opcodes": sorted(f.opcodes),
                    "calls": [[DYNAMIC if t is None else t.hex, s] for t, s in f.calls],
                    "body": [list(ins) for ins in f.body],
                }
                if f.name:
                    entry["name"] = f.name
                fns[sig] = entry
            d: dict = {"erc20": c.erc20, "functions": fns}
            if c.name:
                d["name"] = c.name
            out[addr.hex] = d
        return out

    @classmethod
    def from_json(cls, d: Mapping) -> "ContractRegistry":
        reg = cls()
        for addr_s, cd in d.items():
            addr = parse_address(addr_s)
            fns = {}
            for sig, fd in cd.get("functions", {}).items():
                calls = []
                for target, callee in fd.get("calls", []):
                    calls.append((None if target == DYNAMIC else parse_address(target), str(callee)))
                fns[sig] = FunctionDef(
                    sig=sig,
                    body=tuple(tuple(ins) for ins in fd.get("body", [])),
                    opcodes=frozenset(fd.get("opcodes", [])),
                    calls=tuple(calls),
                    name=fd.get("name", ""),
                )
            reg.add(ContractDef(addr, bool(cd.get("erc20", False)), fns, cd.get("name", "")))
        return reg


def validate_block(block: Block, registry: ContractRegistry) -> None:
    """Token operations must target a declared contract."""
    for t in block.transactions:
        if isinstance(t.payload, (TokenTransfer, TokenTransferFrom, TokenApprove)) and t.dest not in registry:
            raise ValueError(f"transaction {t.index}: token operation on non-contract {t.dest}")


def check_consistency(registry: ContractRegistry) -> list:
    """Cross-check each body's storage footprint against its declared opcodes.

    Returns a list of human-readable problems (empty when consistent):
    touching another contract's storage must be backed by a reachable call,
    and touching arbitrary balances by a reachable CALL or BALANCE.
    """
    problems = []
    for addr, c in registry.contracts.items():
        for sig, fn in c.functions.items():
            ops, reach, dynamic = registry.reach(addr, sig)
            exits = bool(ops & EXIT_OPCODES) or dynamic
            for ins in fn.body:
                if ins[0] not in ("get", "put"):
                    continue
                spec = ins[2] if ins[0] == "get" else ins[1]
                writing = ins[0] == "put"
                where = f"{addr}:{sig}"
                if "balance" in spec:
                    if spec["balance"] not in ("origin", "self"):
                        need = {"CALL"} if writing else {"CALL", "BALANCE"}
                        if not (ops & need) and not dynamic:
                            problems.append(f"{where} touches a foreign balance without {sorted(need)}")
                    continue
                at = spec.get("at", "self")
                if at == "self":
                    continue
                if writing and not exits:
                    problems.append(f"{where} writes foreign storage at {at} without an exit opcode")
                elif not (ops & {"CALL", "STATICCALL"}) and not dynamic:
                    problems.append(f"{where} reads foreign storage at {at} without a call opcode")
                elif at.startswith("0x") and parse_address(at) not in reach and not dynamic:
                    problems.append(f"{where} reads {at} which is not a declared call target")
                elif not at.startswith("0x") and not dynamic and not exits:
                    problems.append(f"{where} reads storage at a computed address {at}")
    return problems


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def label_weak(txn: Transaction, registry: Optional[ContractRegistry]) -> FnLabel:
    p = txn.payload
    if isinstance(p, NativePayment):
        return FnLabel.SIMPLE_PAYMENT
    label = _TOKEN_LABELS.get(type(p))
    if label is not None and registry is not None and registry.is_erc20(txn.dest):
        return label
    return FnLabel.EXITS_CONTRACT


def _reach_label(registry: ContractRegistry, contract: Address, sig: str) -> FnLabel:
    if registry.function(contract, sig) is None:
        return FnLabel.EXITS_CONTRACT
    ops, _, dynamic = registry.reach(contract, sig)
    if dynamic or ops & EXIT_OPCODES:
        return FnLabel.EXITS_CONTRACT
    if ops & STATIC_EXIT_OPCODES:
        return FnLabel.STATIC_EXITS_CONTRACT
    return FnLabel.INSIDE_CONTRACT


def label_strong(contract: Address, sig: str, registry: ContractRegistry) -> FnLabel:
    """Label a contract function by the opcodes reachable from it."""
    if registry.function(contract, sig) is None:
        return FnLabel.EXITS_CONTRACT
    if registry.is_erc20(contract) and sig in _DESIGNATED:
        return _DESIGNATED[sig]
    return _reach_label(registry, contract, sig)


def label_strong_txn(txn: Transaction, registry: Optional[ContractRegistry]) -> FnLabel:
    if isinstance(txn.payload, ContractCall):
        if registry is None:
            return FnLabel.EXITS_CONTRACT
        return label_strong(txn.dest, txn.payload.function_sig, registry)
    return label_weak(txn, registry)


# ---------------------------------------------------------------------------
# Independence sets
# ---------------------------------------------------------------------------


@dataclass
class _Footprint:
    conflicts_all: bool = False
    poisons_later: bool = False
    od: tuple = ()
    erc: Optional[Address] = None
    tk: tuple = ()


def _token_parties(txn: Transaction) -> tuple:
    p = txn.payload
    if isinstance(p, TokenTransfer):
        return (txn.origin, p.target)
    if isinstance(p, TokenTransferFrom):
        return (txn.origin, p.from_, p.to)
    return (txn.origin, p.spender)


def _footprint(txn: Transaction, registry: Optional[ContractRegistry], strong: bool) -> _Footprint:
    label = label_weak(txn, registry)
    od = (txn.origin, txn.dest)
    if label in (FnLabel.TRANSFER, FnLabel.TRANSFER_FROM, FnLabel.APPROVE):
        return _Footprint(od=od, erc=txn.dest, tk=_token_parties(txn))
    if label == FnLabel.SIMPLE_PAYMENT:
        return _Footprint(od=od)
    if strong and isinstance(txn.payload, ContractCall) and registry is not None:
        sig = txn.payload.function_sig
        reach_label = _reach_label(registry, txn.dest, sig)
        if reach_label == FnLabel.INSIDE_CONTRACT:
            return _Footprint(od=od)
        if reach_label == FnLabel.STATIC_EXITS_CONTRACT:
            ops, reach, _ = registry.reach(txn.dest, sig)
            if "BALANCE" in ops:
                return _Footprint(conflicts_all=True, poisons_later=True)
            return _Footprint(poisons_later=True, od=od + tuple(sorted(reach)))
    return _Footprint(conflicts_all=True, poisons_later=True)


def _derive(block: Block, registry: Optional[ContractRegistry], strong: bool, lazy_coinbase: bool) -> ConflictSpec:
    n = len(block)
    poison = 0
    od_masks: dict = {}
    tk_masks: dict = {}
    erc_masks: dict = {}
    masks = [0] * n
    complete = [True] * n
    cb = block.coinbase
    for k, txn in enumerate(block.transactions):
        fp = _footprint(txn, registry, strong)
        if not lazy_coinbase and not fp.conflicts_all:
            fp.od = fp.od + (cb,)
            if fp.erc is not None:
                fp.tk = fp.tk + (cb,)
        bit = 1 << k
        if fp.conflicts_all:
            masks[k] = 0
            complete[k] = False
        else:
            comp = poison
            od_union = 0
            for a in fp.od:
                od_union |= od_masks.get(a, 0)
            if fp.erc is not None:
                comp |= od_union & ~erc_masks.get(fp.erc, 0)
                for a in fp.tk:
                    comp |= tk_masks.get((fp.erc, a), 0)
            else:
                comp |= od_union
            masks[k] = (bit - 1) & ~comp
        if fp.poisons_later:
            poison |= bit
            continue
        for a in fp.od:
            od_masks[a] = od_masks.get(a, 0) | bit
        if fp.erc is not None:
            erc_masks[fp.erc] = erc_masks.get(fp.erc, 0) | bit
            for a in fp.tk:
                tk_masks[(fp.erc, a)] = tk_masks.get((fp.erc, a), 0) | bit
    return ConflictSpec(n, masks, complete)


def get_cset_weak(block: Block, registry: Optional[ContractRegistry] = None, *, lazy_coinbase: bool = True) -> ConflictSpec:
    """Independence sets from payment and token-operation labels only."""
    return _derive(block, registry, False, lazy_coinbase)


def get_cset_strong(block: Block, registry: Optional[ContractRegistry] = None, *, lazy_coinbase: bool = True) -> ConflictSpec:
    """Independence sets that also use call-graph opcode reachability.

    Functions reaching no exit opcode behave like payments between origin
    and destination. A function that only reads foreign state is treated
    as conflicting with every later transaction, while it is independent of
    an earlier transaction whose origin and destination avoid its origin,
    destination and statically reachable contracts.
    """
    return _derive(block, registry, True, lazy_coinbase)


def ground_truth_from_access(access: list) -> ConflictSpec:
    """``cset[k]`` = every ``i < k`` whose write set misses ``k``'s read set."""
    n = len(access)
    writers: dict = {}
    masks = []
    for k, a in enumerate(access):
        m = 0
        for key in a.rset:
            m |= writers.get(key, 0)
        masks.append(((1 << k) - 1) & ~m)
        for key in a.wset:
            writers[key] = writers.get(key, 0) | (1 << k)
    return ConflictSpec(n, masks)


def ground_truth_cset(
    block: Block,
    base: Mapping[StateKey, int],
    *,
    registry: Any = None,
    lazy_coinbase: bool = True,
) -> ConflictSpec:
    from .seq import run_sequential

    res = run_sequential(block, base, registry=registry, lazy_coinbase=lazy_coinbase)
    return ground_truth_from_access(res.access)


def soundness_violations(spec: ConflictSpec, access: list) -> list:
    """Pairs ``(i, k)`` claimed independent although ``i`` wrote what ``k`` read."""
    return spec.violations_against(ground_truth_from_access(access))
