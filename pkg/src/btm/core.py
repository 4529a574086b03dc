"""Domain types shared by every executor.

Addresses, state keys, transactions, blocks, conflict specifications,
access sets and execution reports, plus their JSON encodings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, ClassVar, Iterable, Iterator, Mapping, Optional, Union

import numpy as np

MAX_VALUE = 2**128 - 1


class Address(int):
    """Account identifier. An ``int`` that renders as a 20-byte hex string."""

    __slots__ = ()

    def __new__(cls, value: Union[int, str]) -> "Address":
        if isinstance(value, str):
            value = int(value, 16)
        if value < 0 or value >= 1 << 160:
            raise ValueError(f"address out of range: {value!r}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"0x{int(self):040x}"

    __str__ = __repr__

    @property
    def hex(self) -> str:
        return f"0x{int(self):040x}"


def parse_address(text: str) -> Address:
    if not isinstance(text, str) or not text.startswith("0x"):
        raise ValueError(f"address must be a 0x-prefixed hex string: {text!r}")
    return Address(text)


# ---------------------------------------------------------------------------
# State keys
# ---------------------------------------------------------------------------


class StateKey:
    """Base class of the closed state-key variant."""

    __slots__ = ()
    _tag: ClassVar[int] = -1

    def sort_key(self) -> tuple:
        raise NotImplementedError

    @property
    def account(self) -> Address:
        """The account whose data this key belongs to."""
        raise NotImplementedError

    def __lt__(self, other: "StateKey") -> bool:
        return self.sort_key() < other.sort_key()

    def __le__(self, other: "StateKey") -> bool:
        return self.sort_key() <= other.sort_key()

    def __gt__(self, other: "StateKey") -> bool:
        return self.sort_key() > other.sort_key()

    def __ge__(self, other: "StateKey") -> bool:
        return self.sort_key() >= other.sort_key()


@dataclass(frozen=True, slots=True, eq=True)
class Balance(StateKey):
    owner: Address
    _tag: ClassVar[int] = 0

    def sort_key(self) -> tuple:
        return (0, int(self.owner))

    @property
    def account(self) -> Address:
        return self.owner


@dataclass(frozen=True, slots=True, eq=True)
class TokenBalance(StateKey):
    contract: Address
    owner: Address
    _tag: ClassVar[int] = 1

    def sort_key(self) -> tuple:
        return (1, int(self.contract), int(self.owner))

    @property
    def account(self) -> Address:
        return self.contract


@dataclass(frozen=True, slots=True, eq=True)
class TokenAllowance(StateKey):
    contract: Address
    owner: Address
    spender: Address
    _tag: ClassVar[int] = 2

    def sort_key(self) -> tuple:
        return (2, int(self.contract), int(self.owner), int(self.spender))

    @property
    def account(self) -> Address:
        return self.contract


@dataclass(frozen=True, slots=True, eq=True)
class Slot(StateKey):
    contract: Address
    slot: int
    _tag: ClassVar[int] = 3

    def sort_key(self) -> tuple:
        return (3, int(self.contract), self.slot)

    @property
    def account(self) -> Address:
        return self.contract


def key_to_str(key: StateKey) -> str:
    if isinstance(key, Balance):
        return f"bal:{key.owner.hex}"
    if isinstance(key, TokenBalance):
        return f"tok:{key.contract.hex}:{key.owner.hex}"
    if isinstance(key, TokenAllowance):
        return f"allow:{key.contract.hex}:{key.owner.hex}:{key.spender.hex}"
    if isinstance(key, Slot):
        return f"slot:{key.contract.hex}:{key.slot}"
    raise TypeError(f"not a state key: {key!r}")


def key_from_str(text: str) -> StateKey:
    kind, _, rest = text.partition(":")
    parts = rest.split(":")
    if kind == "bal" and len(parts) == 1:
        return Balance(parse_address(parts[0]))
    if kind == "tok" and len(parts) == 2:
        return TokenBalance(parse_address(parts[0]), parse_address(parts[1]))
    if kind == "allow" and len(parts) == 3:
        return TokenAllowance(*(parse_address(p) for p in parts))
    if kind == "slot" and len(parts) == 2:
        return Slot(parse_address(parts[0]), int(parts[1]))
    raise ValueError(f"malformed state key: {text!r}")


# ---------------------------------------------------------------------------
# Transactions and blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class NativePayment:
    kind: ClassVar[str] = "native"


@dataclass(frozen=True, slots=True)
class TokenTransfer:
    target: Address
    amount: int
    kind: ClassVar[str] = "token_transfer"


@dataclass(frozen=True, slots=True)
class TokenTransferFrom:
    from_: Address
    to: Address
    amount: int
    kind: ClassVar[str] = "token_transfer_from"


@dataclass(frozen=True, slots=True)
class TokenApprove:
    spender: Address
    amount: int
    kind: ClassVar[str] = "token_approve"


@dataclass(frozen=True, slots=True)
class ContractCall:
    function_sig: str
    args: tuple = ()
    kind: ClassVar[str] = "call"


Payload = Union[NativePayment, TokenTransfer, TokenTransferFrom, TokenApprove, ContractCall]
TOKEN_PAYLOADS = (TokenTransfer, TokenTransferFrom, TokenApprove)


@dataclass(frozen=True, slots=True)
class Transaction:
    index: int
    origin: Address
    dest: Address
    value: int = 0
    payload: Payload = NativePayment()
    gas_fee: int = 0
    synthetic_work: int = 0

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("transaction index must be non-negative")
        for name in ("value", "gas_fee"):
            v = getattr(self, name)
            if not 0 <= v <= MAX_VALUE:
                raise ValueError(f"{name} out of range: {v}")
        if self.synthetic_work < 0:
            raise ValueError("synthetic_work must be non-negative")


@dataclass(frozen=True)
class Block:
    transactions: tuple
    coinbase: Address
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "transactions", tuple(self.transactions))
        for k, txn in enumerate(self.transactions):
            if txn.index != k:
                raise ValueError(f"transaction at position {k} has index {txn.index}")

    def __len__(self) -> int:
        return len(self.transactions)

    def __iter__(self) -> Iterator[Transaction]:
        return iter(self.transactions)

    def __getitem__(self, k: int) -> Transaction:
        return self.transactions[k]


def _payload_to_json(p: Payload) -> dict:
    if isinstance(p, NativePayment):
        return {"kind": "native"}
    if isinstance(p, TokenTransfer):
        return {"kind": p.kind, "target": p.target.hex, "amount": p.amount}
    if isinstance(p, TokenTransferFrom):
        return {"kind": p.kind, "from": p.from_.hex, "to": p.to.hex, "amount": p.amount}
    if isinstance(p, TokenApprove):
        return {"kind": p.kind, "spender": p.spender.hex, "amount": p.amount}
    if isinstance(p, ContractCall):
        args = [a.hex if isinstance(a, Address) else int(a) for a in p.args]
        return {"kind": p.kind, "sig": p.function_sig, "args": args}
    raise TypeError(f"unknown payload {p!r}")


def _arg_from_json(a: Any) -> int:
    if isinstance(a, str):
        return parse_address(a)
    if isinstance(a, bool) or not isinstance(a, int):
        raise ValueError(f"call argument must be an address string or integer: {a!r}")
    return a


def _payload_from_json(d: Mapping) -> Payload:
    kind = d.get("kind")
    if kind == "native":
        return NativePayment()
    if kind == "token_transfer":
        return TokenTransfer(parse_address(d["target"]), int(d["amount"]))
    if kind == "token_transfer_from":
        return TokenTransferFrom(parse_address(d["from"]), parse_address(d["to"]), int(d["amount"]))
    if kind == "token_approve":
        return TokenApprove(parse_address(d["spender"]), int(d["amount"]))
    if kind == "call":
        return ContractCall(str(d["sig"]), tuple(_arg_from_json(a) for a in d.get("args", [])))
    raise ValueError(f"unknown payload kind: {kind!r}")


def block_to_json(block: Block) -> dict:
    txns = []
    for t in block.transactions:
        txns.append({
            "index": t.index,
            "origin": t.origin.hex,
            "dest": t.dest.hex,
            "value": t.value,
            "payload": _payload_to_json(t.payload),
            "gas_fee": t.gas_fee,
            "work": t.synthetic_work,
        })
    out: dict = {"coinbase": block.coinbase.hex, "txns": txns}
    if block.meta:
        out["meta"] = dict(block.meta)
    return out


def block_from_json(d: Mapping) -> Block:
    txns = []
    for pos, t in enumerate(d["txns"]):
        txns.append(Transaction(
            index=int(t.get("index", pos)),
            origin=parse_address(t["origin"]),
            dest=parse_address(t["dest"]),
            value=int(t.get("value", 0)),
            payload=_payload_from_json(t.get("payload", {"kind": "native"})),
            gas_fee=int(t.get("gas_fee", 0)),
            synthetic_work=int(t.get("work", 0)),
        ))
    return Block(tuple(txns), parse_address(d["coinbase"]), dict(d.get("meta", {})))


def state_to_json(state: Mapping[StateKey, int]) -> dict:
    return {key_to_str(k): v for k, v in sorted(state.items())}


def state_from_json(d: Mapping[str, int]) -> dict:
    out = {}
    for k, v in d.items():
        v = int(v)
        if not 0 <= v <= MAX_VALUE:
            raise ValueError(f"value out of range for {k}: {v}")
        out[key_from_str(k)] = v
    return out


def state_hash(state: Mapping[StateKey, int]) -> str:
    """Canonical hash over the sorted (key, value) pairs."""
    h = hashlib.sha256()
    for k, v in sorted(state.items()):
        h.update(f"{key_to_str(k)}={v}\n".encode())
    return h.hexdigest()


def state_diff(a: Mapping[StateKey, int], b: Mapping[StateKey, int]) -> list:
    """Sorted list of ``(key, a_value, b_value)`` for keys where the states differ."""
    out = []
    for k in sorted(set(a) | set(b)):
        va, vb = a.get(k), b.get(k)
        if va != vb:
            out.append((k, va, vb))
    return out


# ---------------------------------------------------------------------------
# Access sets and conflicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AccessSets:
    rset: frozenset = frozenset()
    wset: frozenset = frozenset()

    @property
    def dset(self) -> frozenset:
        return self.rset | self.wset


def read_from_conflict(i_sets: AccessSets, j_sets: AccessSets) -> bool:
    """True iff the earlier transaction writes something the later one reads."""
    return not i_sets.wset.isdisjoint(j_sets.rset)


def conflict(i_sets: AccessSets, j_sets: AccessSets) -> bool:
    """True iff some common key is written by at least one of the two."""
    return (
        not i_sets.wset.isdisjoint(j_sets.dset)
        or not j_sets.wset.isdisjoint(i_sets.dset)
    )


# ---------------------------------------------------------------------------
# Conflict specifications
# ---------------------------------------------------------------------------


class SpecError(ValueError):
    pass


def bit_indices(mask: int) -> list:
    """Ascending indices of the set bits of ``mask``."""
    if mask <= 0:
        if mask < 0:
            raise ValueError("negative mask")
        return []
    if mask.bit_count() <= 48:
        out = []
        while mask:
            low = mask & -mask
            out.append(low.bit_length() - 1)
            mask ^= low
        return out
    raw = np.frombuffer(mask.to_bytes((mask.bit_length() + 7) // 8, "little"), dtype=np.uint8)
    return np.flatnonzero(np.unpackbits(raw, bitorder="little")).tolist()


def mask_of(indices: Iterable[int]) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


class _CsetView(Mapping):
    def __init__(self, spec: "ConflictSpec"):
        self._spec = spec

    def __getitem__(self, k: int) -> frozenset:
        if not isinstance(k, int) or not 0 <= k < self._spec.n:
            raise KeyError(k)
        return frozenset(bit_indices(self._spec.cset_mask(k)))

    def __iter__(self) -> Iterator[int]:
        return iter(range(self._spec.n))

    def __len__(self) -> int:
        return self._spec.n


class ConflictSpec:
    """Per-transaction independence sets over a block of ``n`` transactions.

    ``cset[k]`` holds the preceding indices ``i < k`` that transaction ``k``
    is known to be independent of; ``complete[k]`` says whether that set is
    known-complete. Sets are stored as integer bitmasks so that dense
    specifications of large blocks stay small.
    """

    __slots__ = ("n", "_masks", "complete")

    def __init__(self, n: int, masks: Iterable[int], complete: Optional[Iterable[bool]] = None):
        masks = list(masks)
        if len(masks) != n:
            raise SpecError(f"expected {n} masks, got {len(masks)}")
        for k, m in enumerate(masks):
            if m < 0 or m >> k:
                raise SpecError(f"cset[{k}] references an index >= {k}")
        self.n = n
        self._masks = masks
        self.complete = [True] * n if complete is None else [bool(c) for c in complete]
        if len(self.complete) != n:
            raise SpecError("complete flags do not match block length")

    @classmethod
    def from_sets(
        cls,
        n: int,
        cset: Mapping[int, Iterable[int]],
        complete: Union[None, Iterable[bool], Mapping[int, bool]] = None,
    ) -> "ConflictSpec":
        masks = [0] * n
        for k, members in cset.items():
            if not 0 <= k < n:
                raise SpecError(f"cset key {k} outside block of length {n}")
            m = 0
            for i in members:
                if not 0 <= i < k:
                    raise SpecError(f"cset[{k}] contains {i}, which is not a strict predecessor")
                m |= 1 << i
            masks[k] = m
        if isinstance(complete, Mapping):
            complete = [bool(complete.get(k, True)) for k in range(n)]
        return cls(n, masks, complete)

    @classmethod
    def full(cls, n: int, complete: bool = True) -> "ConflictSpec":
        return cls(n, [(1 << k) - 1 for k in range(n)], [complete] * n)

    @classmethod
    def empty(cls, n: int, complete: bool = True) -> "ConflictSpec":
        return cls(n, [0] * n, [complete] * n)

    @property
    def cset(self) -> Mapping[int, frozenset]:
        return _CsetView(self)

    def cset_mask(self, k: int) -> int:
        return self._masks[k]

    def comp_mask(self, k: int) -> int:
        return ((1 << k) - 1) & ~self._masks[k]

    def cset_size(self, k: int) -> int:
        return self._masks[k].bit_count()

    def comp_size(self, k: int) -> int:
        return k - self._masks[k].bit_count()

    def dependencies(self, k: int) -> list:
        """``cSetComp(k)``: predecessors not known to be independent, ascending."""
        return bit_indices(self.comp_mask(k))

    def covers_all_predecessors(self, k: int) -> bool:
        return self._masks[k] == (1 << k) - 1

    def independent_pairs(self) -> int:
        return sum(m.bit_count() for m in self._masks)

    def tuple_fraction(self) -> float:
        """Share of predecessor pairs proven independent; 1.0 by convention when n < 2."""
        pairs = self.n * (self.n - 1) // 2
        if pairs == 0:
            return 1.0
        return self.independent_pairs() / pairs

    def is_subset_of(self, other: "ConflictSpec") -> bool:
        """Pointwise ``self.cset[k] <= other.cset[k]``."""
        if self.n != other.n:
            raise SpecError("specs cover blocks of different length")
        return all(a & ~b == 0 for a, b in zip(self._masks, other._masks))

    def violations_against(self, truth: "ConflictSpec") -> list:
        """Pairs ``(i, k)`` claimed independent here but not in ``truth``."""
        out = []
        for k, (a, b) in enumerate(zip(self._masks, truth._masks)):
            for i in bit_indices(a & ~b):
                out.append((i, k))
        return out

    def with_independent(self, k: int) -> "ConflictSpec":
        masks = list(self._masks)
        masks[k] = (1 << k) - 1
        complete = list(self.complete)
        complete[k] = True
        return ConflictSpec(self.n, masks, complete)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConflictSpec):
            return NotImplemented
        return self.n == other.n and self._masks == other._masks and self.complete == other.complete

    def __repr__(self) -> str:
        return f"ConflictSpec(n={self.n}, tuple_fraction={self.tuple_fraction():.3f})"

    def to_json(self) -> dict:
        """Each entry is written as whichever of cset / complement is shorter."""
        entries = {}
        for k in range(self.n):
            size = self.cset_size(k)
            if size == 0:
                continue
            if size <= k - size:
                entries[str(k)] = {"cset": bit_indices(self._masks[k])}
            else:
                entries[str(k)] = {"comp": bit_indices(self.comp_mask(k))}
        return {"n": self.n, "complete": list(self.complete), "entries": entries}

    @classmethod
    def from_json(cls, d: Mapping) -> "ConflictSpec":
        n = int(d["n"])
        masks = [0] * n
        for key, entry in d.get("entries", {}).items():
            k = int(key)
            if not 0 <= k < n:
                raise SpecError(f"entry {k} outside block of length {n}")
            if "cset" in entry:
                members = entry["cset"]
                bad = [i for i in members if not 0 <= i < k]
                if bad:
                    raise SpecError(f"cset[{k}] contains non-predecessors {bad}")
                masks[k] = mask_of(members)
            else:
                members = entry["comp"]
                bad = [i for i in members if not 0 <= i < k]
                if bad:
                    raise SpecError(f"comp[{k}] contains non-predecessors {bad}")
                masks[k] = ((1 << k) - 1) & ~mask_of(members)
        return cls(n, masks, d.get("complete"))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ExecutionReport:
    engine: str
    final_state: dict
    aborts: int = 0
    validations: int = 0
    dependency_waits: int = 0
    re_executions: int = 0
    wall_ms: float = 0.0
    threads: int = 1
    executions: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def state_hash(self) -> str:
        return state_hash(self.final_state)

    def counters(self) -> dict:
        return {
            "aborts": self.aborts,
            "validations": self.validations,
            "dependency_waits": self.dependency_waits,
            "re_executions": self.re_executions,
            "executions": self.executions,
        }
