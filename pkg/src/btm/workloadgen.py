"""Deterministic synthetic workloads with Pareto-skewed conflict structure.

Larger ``alpha`` concentrates transactions on fewer clusters or accounts and
therefore produces more conflicts; small ``alpha`` spreads them almost
uniformly.
"""

from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

from .analyzer import ContractDef, ContractRegistry, FunctionDef, selector
from .core import (
    Address,
    Balance,
    Block,
    ContractCall,
    NativePayment,
    Slot,
    TokenBalance,
    TokenTransfer,
    Transaction,
)

KINDS = ("erc20", "mix", "p2p", "batch", "generic")
BATCH_GROUP = 4
REVERT_AMOUNT = 2**127


def eoa(i: int) -> Address:
    return Address((0xA << 156) | i)


def contract_address(i: int) -> Address:
    return Address((0xC << 156) | i)


COINBASE = Address((0xB << 156) | 0xC0FFEE)


def pareto_index(rng: random.Random, alpha: float, m: int) -> int:
    """Pareto(x_m=1, alpha) variate by inverse CDF, folded onto ``range(m)``.

    x = U^(-1/alpha) with U uniform on (0, 1]; index ``floor(x) - 1`` modulo
    ``m``. Large alpha keeps x near 1, concentrating on index 0.
    """
    u = 1.0 - rng.random()
    try:
        x = u ** (-1.0 / alpha)
    except OverflowError:
        x = math.inf
    if not math.isfinite(x) or x >= 2**62:
        return rng.randrange(m)
    return (int(x) - 1) % m


@dataclass(frozen=True)
class WorkloadParams:
    kind: str = "erc20"
    block_size: int = 100
    alpha: float = 1.0
    accounts: Optional[int] = None
    clusters: Optional[int] = None
    seed: int = 0
    synthetic_work: int = 2000
    initial_balance: int = 10**12
    gas_fee: int = 1
    revert_rate: float = 0.0
    contract_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.block_size < 1:
            raise ValueError("block_size must be at least 1")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be a positive finite number")
        if self.accounts is not None and self.accounts < 1:
            raise ValueError("accounts must be at least 1")
        if self.clusters is not None and self.clusters < 1:
            raise ValueError("clusters must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.synthetic_work < 0 or self.gas_fee < 0 or self.initial_balance < 0:
            raise ValueError("work, fee and balance must be non-negative")
        for name in ("revert_rate", "contract_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def resolved_clusters(self) -> int:
        if self.clusters is not None:
            return self.clusters
        if self.kind == "erc20":
            return self.block_size
        if self.kind == "mix":
            return max(1, self.block_size // 4)
        return 1

    def resolved_accounts(self) -> int:
        if self.accounts is not None:
            return self.accounts
        if self.kind == "erc20":
            return self.resolved_clusters()
        return max(2, self.block_size)


class Workload(NamedTuple):
    block: Block
    base: dict
    registry: ContractRegistry


# -- contract corpus ---------------------------------------------------------

CORPUS_BASE = 1 << 40
CORPUS_INSTANCES = 4


def _fn(name: str, body: list, opcodes: set, calls: list = ()) -> FunctionDef:
    return FunctionDef(selector(name), tuple(tuple(i) for i in body), frozenset(opcodes), tuple(calls), name)


def corpus_contracts(instances: int = CORPUS_INSTANCES) -> list:
    """A small family of contracts: priced token, price oracle, wallet,
    message board and a forwarder with a computed call target."""
    out = []
    for j in range(instances):
        oracle = contract_address(CORPUS_BASE + 5 * j)
        token = contract_address(CORPUS_BASE + 5 * j + 1)
        wallet = contract_address(CORPUS_BASE + 5 * j + 2)
        board = contract_address(CORPUS_BASE + 5 * j + 3)
        fwd = contract_address(CORPUS_BASE + 5 * j + 4)
        price = _fn("tokenPrice()", [["get", "r0", {"slot": 0}]], {"SLOAD"})
        set_price = _fn("setPrice(uint256)", [["put", {"slot": 0}, "arg0"]], {"SSTORE"})
        out.append(ContractDef(oracle, False, {price.sig: price, set_price.sig: set_price}, f"Oracle{j}"))
        buy = _fn(
            "turnEtherToToken()",
            [
                ["get", "r0", {"slot": 0, "at": oracle.hex}],
                ["mul", "r1", "value", "r0"],
                ["get", "r2", {"token": "origin"}],
                ["add", "r3", "r2", "r1"],
                ["put", {"token": "origin"}, "r3"],
            ],
            {"STATICCALL", "SLOAD", "SSTORE"},
            [(oracle, price.sig)],
        )
        out.append(ContractDef(token, True, {buy.sig: buy}, f"Token{j}"))
        add = _fn(
            "addToWallet()",
            [
                ["get", "r0", {"map": 0, "of": "origin"}],
                ["add", "r1", "r0", "value"],
                ["put", {"map": 0, "of": "origin"}, "r1"],
            ],
            {"SLOAD", "SSTORE"},
        )
        withdraw = _fn(
            "withdraw(uint256)",
            [
                ["get", "r0", {"map": 0, "of": "origin"}],
                ["require_gte", "r0", "arg0"],
                ["sub", "r1", "r0", "arg0"],
                ["put", {"map": 0, "of": "origin"}, "r1"],
                ["get", "r2", {"balance": "self"}],
                ["sub", "r3", "r2", "arg0"],
                ["put", {"balance": "self"}, "r3"],
                ["get", "r4", {"balance": "origin"}],
                ["add", "r5", "r4", "arg0"],
                ["put", {"balance": "origin"}, "r5"],
            ],
            {"CALL", "SLOAD", "SSTORE"},
        )
        out.append(ContractDef(wallet, False, {add.sig: add, withdraw.sig: withdraw}, f"Wallet{j}"))
        recv = _fn(
            "receiveMessage(uint256)",
            [
                ["get", "r0", {"slot": 0}],
                ["require_gte", "r0", 1],
                ["put", {"map": 1, "of": "origin"}, "arg0"],
            ],
            {"SLOAD", "SSTORE"},
        )
        accept = _fn("setShouldAccept()", [["put", {"slot": 0}, 1]], {"SSTORE"})
        out.append(ContractDef(board, False, {recv.sig: recv, accept.sig: accept}, f"Board{j}"))
        forward = _fn(
            "forward(address)",
            [
                ["get", "r0", {"balance": "arg0"}],
                ["add", "r1", "r0", "value"],
                ["put", {"balance": "arg0"}, "r1"],
                ["get", "r2", {"balance": "self"}],
                ["sub", "r3", "r2", "value"],
                ["put", {"balance": "self"}, "r3"],
            ],
            {"CALL"},
            [(None, "")],
        )
        out.append(ContractDef(fwd, False, {forward.sig: forward}, f"Forwarder{j}"))
    return out


def _corpus_call(rng: random.Random, corpus: list, origin: Address, accounts: int, alpha: float, fee: int, work: int, k: int) -> Transaction:
    j = rng.randrange(len(corpus) // 5)
    oracle, token, wallet, board, fwd = (corpus[5 * j + i] for i in range(5))
    choice = rng.randrange(8)
    value, dest, name, args = 0, None, "", ()
    if choice == 0:
        dest, name, value = token, "turnEtherToToken()", rng.randint(1, 100)
    elif choice == 1:
        dest, name = oracle, "tokenPrice()"
    elif choice == 2:
        dest, name, args = oracle, "setPrice(uint256)", (rng.randint(1, 10),)
    elif choice == 3:
        dest, name, value = wallet, "addToWallet()", rng.randint(1, 100)
    elif choice == 4:
        dest, name, args = wallet, "withdraw(uint256)", (rng.randint(1, 50),)
    elif choice == 5:
        dest, name, args = board, "receiveMessage(uint256)", (rng.randrange(2**32),)
    elif choice == 6:
        dest, name = board, "setShouldAccept()"
    else:
        to = eoa(pareto_index(rng, alpha, accounts))
        dest, name, value, args = fwd, "forward(address)", rng.randint(1, 100), (to,)
    return Transaction(k, origin, dest.address, value, ContractCall(selector(name), args), fee, work)


# -- generation --------------------------------------------------------------


def generate(params: WorkloadParams) -> Workload:
    """Build the block, funded base state and registry for ``params``."""
    rng = random.Random(params.seed)
    n = params.block_size
    clusters = params.resolved_clusters()
    accounts = params.resolved_accounts()
    per_cluster = max(1, accounts // clusters)
    fee, work = params.gas_fee, params.synthetic_work
    tokens = [contract_address(c) for c in range(clusters)]
    corpus = corpus_contracts() if params.contract_fraction > 0 else []
    registry = ContractRegistry([ContractDef(t, True, {}, f"Erc20_{c}") for c, t in enumerate(tokens)] + corpus)

    base: dict = {}
    used_eoas: set = set()
    token_holders: set = set()

    def amount(lo: int, hi: int) -> int:
        if params.revert_rate and rng.random() < params.revert_rate:
            return REVERT_AMOUNT
        return rng.randint(lo, hi)

    def native(k: int) -> Transaction:
        o = eoa(pareto_index(rng, params.alpha, accounts))
        d = eoa(pareto_index(rng, params.alpha, accounts))
        used_eoas.update((o, d))
        return Transaction(k, o, d, amount(1, 1000), NativePayment(), fee, work)

    def erc20(k: int) -> Transaction:
        c = pareto_index(rng, params.alpha, clusters)
        o = eoa(c * per_cluster + rng.randrange(per_cluster))
        r = eoa(c * per_cluster + rng.randrange(per_cluster))
        used_eoas.update((o, r))
        token_holders.add((tokens[c], o))
        return Transaction(k, o, tokens[c], 0, TokenTransfer(r, amount(1, 100)), fee, work)

    txns: list = []

    def batch_group() -> None:
        o = eoa(pareto_index(rng, params.alpha, accounts))
        t = tokens[rng.randrange(clusters)]
        used_eoas.add(o)
        token_holders.add((t, o))
        for _ in range(BATCH_GROUP):
            if len(txns) >= n:
                return
            r = eoa(rng.randrange(accounts))
            used_eoas.add(r)
            txns.append(Transaction(len(txns), o, t, 0, TokenTransfer(r, amount(1, 100)), fee, work))

    while len(txns) < n:
        k = len(txns)
        if corpus and rng.random() < params.contract_fraction:
            o = eoa(pareto_index(rng, params.alpha, accounts))
            used_eoas.add(o)
            txns.append(_corpus_call(rng, corpus, o, accounts, params.alpha, fee, work, k))
            continue
        kind = params.kind
        if kind == "generic":
            kind = "p2p" if rng.random() < 0.5 else "batch"
        elif kind == "mix":
            kind = "p2p" if rng.random() < 0.5 else "erc20"
        if kind == "erc20":
            txns.append(erc20(k))
        elif kind == "p2p":
            txns.append(native(k))
        else:
            batch_group()

    for a in sorted(used_eoas):
        base[Balance(a)] = params.initial_balance
    for t, a in sorted(token_holders):
        base[TokenBalance(t, a)] = params.initial_balance
    for j in range(len(corpus) // 5):
        base[Slot(corpus[5 * j].address, 0)] = 3
        base[Slot(corpus[5 * j + 3].address, 0)] = j % 2
        base[Balance(corpus[5 * j + 4].address)] = params.initial_balance

    meta = {k: v for k, v in asdict(params).items() if v is not None}
    meta["clusters"], meta["accounts"] = clusters, accounts
    return Workload(Block(tuple(txns), COINBASE, meta), base, registry)
