"""Deterministic transaction semantics over an abstract storage view.

Every executor runs transactions through :class:`ToyVM`; the only thing
that differs between executors is the :class:`StorageView` they pass in.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol

from .core import (
    MAX_VALUE,
    AccessSets,
    Address,
    Balance,
    ContractCall,
    NativePayment,
    Slot,
    StateKey,
    TokenAllowance,
    TokenApprove,
    TokenBalance,
    TokenTransfer,
    TokenTransferFrom,
    Transaction,
)

COMMITTED = "committed"
REVERTED = "reverted"

_SPIN_SALT = b"btm-synthetic-work"


def spin(iterations: int) -> None:
    """Burn CPU for ``iterations`` rounds of a key-derivation loop.

    The underlying C routine drops the GIL, so concurrent spins overlap on
    multi-core hosts the way real VM execution would.
    """
    if iterations > 0:
        hashlib.pbkdf2_hmac("sha256", b"btm", _SPIN_SALT, iterations)


class StorageView(Protocol):
    def get(self, key: StateKey) -> int: ...

    def put(self, key: StateKey, value: int) -> None: ...


class DictView:
    """Single-version view over a plain dict; absent keys read as 0."""

    __slots__ = ("state",)

    def __init__(self, state: Optional[dict] = None):
        self.state = {} if state is None else state

    def get(self, key: StateKey) -> int:
        return self.state.get(key, 0)

    def put(self, key: StateKey, value: int) -> None:
        self.state[key] = value


class TrackingView:
    """Records every distinct key fetched from or stored to the wrapped view."""

    __slots__ = ("inner", "gets", "puts")

    def __init__(self, inner: StorageView):
        self.inner = inner
        self.gets: set = set()
        self.puts: set = set()

    def get(self, key: StateKey) -> int:
        self.gets.add(key)
        return self.inner.get(key)

    def put(self, key: StateKey, value: int) -> None:
        self.puts.add(key)
        self.inner.put(key, value)


@dataclass
class VmOutcome:
    status: str
    reason: Optional[str]
    access: AccessSets
    writes: dict = field(default_factory=dict)
    fee: int = 0

    @property
    def committed(self) -> bool:
        return self.status == COMMITTED

    @property
    def rset(self) -> frozenset:
        return self.access.rset

    @property
    def wset(self) -> frozenset:
        return self.access.wset


class _Revert(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class _Frame:
    """Per-execution overlay: caches first reads, buffers writes."""

    __slots__ = ("view", "reads", "cache", "writes")

    def __init__(self, view: StorageView):
        self.view = view
        self.reads: set = set()
        self.cache: dict = {}
        self.writes: dict = {}

    def get(self, key: StateKey) -> int:
        if key in self.writes:
            return self.writes[key]
        if key in self.cache:
            return self.cache[key]
        v = self.view.get(key)
        self.reads.add(key)
        self.cache[key] = v
        return v

    def put(self, key: StateKey, value: int) -> None:
        if not 0 <= value <= MAX_VALUE:
            raise _Revert("overflow")
        self.writes[key] = value


def _add(a: int, b: int) -> int:
    s = a + b
    if s > MAX_VALUE:
        raise _Revert("overflow")
    return s


def map_slot(index: int, who: int) -> int:
    """Storage slot of entry ``who`` in the mapping declared at ``index``."""
    digest = hashlib.sha256(f"{index}:{int(who):040x}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class ToyVM:
    """Executes transactions against a :class:`StorageView`.

    ``registry`` resolves contract function bodies for ``ContractCall``
    payloads. With ``lazy_coinbase`` on, fees are debited from the origin
    and reported in the outcome for the caller to credit after the block;
    with it off every committed transaction also credits the coinbase
    balance directly.
    """

    def __init__(self, registry: Any = None, coinbase: Optional[Address] = None, lazy_coinbase: bool = True):
        if not lazy_coinbase and coinbase is None:
            raise ValueError("eager coinbase crediting needs a coinbase address")
        self.registry = registry
        self.coinbase = coinbase
        self.lazy_coinbase = lazy_coinbase

    def execute(self, txn: Transaction, view: StorageView) -> VmOutcome:
        spin(txn.synthetic_work)
        frame = _Frame(view)
        try:
            fee = self._dispatch(txn, frame)
            if not self.lazy_coinbase:
                cb = Balance(self.coinbase)
                frame.put(cb, _add(frame.get(cb), fee))
        except _Revert as r:
            return VmOutcome(REVERTED, r.reason, AccessSets(frozenset(frame.reads), frozenset()), {}, 0)
        for key, value in frame.writes.items():
            view.put(key, value)
        access = AccessSets(frozenset(frame.reads), frozenset(frame.writes))
        return VmOutcome(COMMITTED, None, access, frame.writes, fee)

    def execute_with_tracking(self, txn: Transaction, view: StorageView) -> VmOutcome:
        """Like :meth:`execute`, with access sets taken from an instrumented view."""
        tracker = TrackingView(view)
        out = self.execute(txn, tracker)
        out.access = AccessSets(frozenset(tracker.gets), frozenset(tracker.puts))
        return out

    # -- payload semantics -------------------------------------------------

    def _dispatch(self, txn: Transaction, f: _Frame) -> int:
        p = txn.payload
        if isinstance(p, NativePayment):
            self._pay(txn, f)
        elif isinstance(p, ContractCall):
            fn = self.registry.function(txn.dest, p.function_sig) if self.registry is not None else None
            if fn is None:
                raise _Revert("no_function")
            if txn.value:
                self._pay(txn, f)
            else:
                self._charge_fee(txn, f)
            self._run_body(txn, fn.body, f)
        elif isinstance(p, (TokenTransfer, TokenTransferFrom, TokenApprove)):
            if txn.value:
                raise _Revert("non_payable")
            self._charge_fee(txn, f)
            self._token_op(txn, p, f)
        else:
            raise TypeError(f"unknown payload {p!r}")
        return txn.gas_fee

    def _pay(self, txn: Transaction, f: _Frame) -> None:
        src, dst = Balance(txn.origin), Balance(txn.dest)
        bal = f.get(src)
        f.get(dst)
        cost = txn.value + txn.gas_fee
        if bal < cost:
            raise _Revert("insufficient")
        f.put(src, bal - cost)
        f.put(dst, _add(f.get(dst), txn.value))

    def _charge_fee(self, txn: Transaction, f: _Frame) -> None:
        src = Balance(txn.origin)
        bal = f.get(src)
        if bal < txn.gas_fee:
            raise _Revert("insufficient")
        if txn.gas_fee:
            f.put(src, bal - txn.gas_fee)

    def _token_op(self, txn: Transaction, p, f: _Frame) -> None:
        c = txn.dest
        if isinstance(p, TokenTransfer):
            self._move_tokens(f, c, txn.origin, p.target, p.amount)
        elif isinstance(p, TokenTransferFrom):
            key = TokenAllowance(c, p.from_, txn.origin)
            allowed = f.get(key)
            if allowed < p.amount:
                raise _Revert("allowance")
            f.put(key, allowed - p.amount)
            self._move_tokens(f, c, p.from_, p.to, p.amount)
        else:
            f.put(TokenAllowance(c, txn.origin, p.spender), p.amount)

    @staticmethod
    def _move_tokens(f: _Frame, contract: Address, src: Address, dst: Address, amount: int) -> None:
        ks, kd = TokenBalance(contract, src), TokenBalance(contract, dst)
        have = f.get(ks)
        f.get(kd)
        if have < amount:
            raise _Revert("insufficient")
        f.put(ks, have - amount)
        f.put(kd, _add(f.get(kd), amount))

    # -- contract bodies ---------------------------------------------------

    def _run_body(self, txn: Transaction, body: list, f: _Frame) -> None:
        regs: dict = {}
        for ins in body:
            op = ins[0]
            if op == "get":
                regs[ins[1]] = f.get(self._key(txn, ins[2]))
            elif op == "put":
                f.put(self._key(txn, ins[1]), self._operand(txn, regs, ins[2]))
            elif op in _ARITH:
                a = self._operand(txn, regs, ins[2])
                b = self._operand(txn, regs, ins[3])
                regs[ins[1]] = _ARITH[op](a, b)
            elif op == "require_gte":
                if self._operand(txn, regs, ins[1]) < self._operand(txn, regs, ins[2]):
                    raise _Revert("require")
            elif op == "spin":
                spin(int(ins[1]))
            else:
                raise ValueError(f"unknown instruction {op!r}")

    @staticmethod
    def _operand(txn: Transaction, regs: dict, spec) -> int:
        if isinstance(spec, int):
            return spec
        if spec == "value":
            return txn.value
        if spec.startswith("arg"):
            return _arg(txn, spec)
        if spec.startswith("r"):
            return regs.get(spec, 0)
        raise ValueError(f"bad operand {spec!r}")

    @staticmethod
    def _who(txn: Transaction, spec: str) -> Address:
        if spec == "origin":
            return txn.origin
        if spec == "self":
            return txn.dest
        if spec.startswith("arg"):
            return Address(_arg(txn, spec))
        return Address(spec)

    def _key(self, txn: Transaction, spec: dict) -> StateKey:
        at = self._who(txn, spec.get("at", "self"))
        if "balance" in spec:
            return Balance(self._who(txn, spec["balance"]))
        if "token" in spec:
            return TokenBalance(at, self._who(txn, spec["token"]))
        if "map" in spec:
            return Slot(at, map_slot(int(spec["map"]), self._who(txn, spec["of"])))
        if "slot" in spec:
            return Slot(at, int(spec["slot"]))
        raise ValueError(f"bad key spec {spec!r}")


def _arg(txn: Transaction, spec: str) -> int:
    i = int(spec[3:])
    args = txn.payload.args
    if i >= len(args):
        raise _Revert("bad_arg")
    return int(args[i])


def _sub(a: int, b: int) -> int:
    if b > a:
        raise _Revert("underflow")
    return a - b


def _mul(a: int, b: int) -> int:
    r = a * b
    if r > MAX_VALUE:
        raise _Revert("overflow")
    return r


def _div(a: int, b: int) -> int:
    if b == 0:
        raise _Revert("div_zero")
    return a // b


_ARITH: dict[str, Callable[[int, int], int]] = {"add": _add, "sub": _sub, "mul": _mul, "div": _div}
