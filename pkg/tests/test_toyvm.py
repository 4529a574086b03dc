from hypothesis import given, settings
from hypothesis import strategies as st

from btm.analyzer import ContractDef, ContractRegistry, FunctionDef, selector
from btm.core import (
    MAX_VALUE,
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
from btm.toyvm import COMMITTED, REVERTED, DictView, ToyVM, map_slot

from btm_testutil import COINBASE, SAFE_CONTRACT, X1, X2, safe_exe_block, safe_exe_registry

A, B, T = Address(0xA1), Address(0xB1), Address(0xC1)


class RecordingView:
    """Independent instrumentation used as the oracle for tracked access sets."""

    def __init__(self, state):
        self.state = state
        self.log = []

    def get(self, key: StateKey) -> int:
        self.log.append(("get", key))
        return self.state.get(key, 0)

    def put(self, key: StateKey, value: int) -> None:
        self.log.append(("put", key))
        self.state[key] = value


def test_native_payment_example():
    state = {Balance(A): 100, Balance(B): 0}
    out = ToyVM().execute_with_tracking(Transaction(0, A, B, 30, NativePayment(), 1), DictView(state))
    assert out.status == COMMITTED
    assert state == {Balance(A): 69, Balance(B): 30}
    assert out.rset == {Balance(A), Balance(B)}
    assert out.wset == {Balance(A), Balance(B)}
    assert out.fee == 1


def test_native_payment_insufficient_reverts_without_writes():
    state = {Balance(A): 10}
    out = ToyVM().execute(Transaction(0, A, B, 10, NativePayment(), 1), DictView(state))
    assert out.status == REVERTED and out.reason == "insufficient"
    assert out.wset == frozenset() and out.fee == 0
    assert state == {Balance(A): 10}


def test_self_transfer_only_pays_fee():
    state = {Balance(A): 50}
    out = ToyVM().execute(Transaction(0, A, A, 0, NativePayment(), 2), DictView(state))
    assert out.committed and state[Balance(A)] == 48


def test_credit_overflow_reverts():
    state = {Balance(A): 10, Balance(B): MAX_VALUE}
    out = ToyVM().execute(Transaction(0, A, B, 1, NativePayment(), 0), DictView(state))
    assert out.reason == "overflow"
    assert state[Balance(B)] == MAX_VALUE


def test_token_transfer_insufficient():
    state = {Balance(A): 10}
    out = ToyVM().execute_with_tracking(Transaction(0, A, T, 0, TokenTransfer(B, 5), 1), DictView(state))
    assert out.status == REVERTED and out.reason == "insufficient"
    assert out.wset == frozenset()
    assert TokenBalance(T, A) in out.rset


def test_token_transfer_moves_tokens_and_charges_fee():
    state = {Balance(A): 10, TokenBalance(T, A): 8}
    out = ToyVM().execute_with_tracking(Transaction(0, A, T, 0, TokenTransfer(B, 5), 1), DictView(state))
    assert out.committed
    assert state[TokenBalance(T, A)] == 3 and state[TokenBalance(T, B)] == 5 and state[Balance(A)] == 9
    assert {TokenBalance(T, A), TokenBalance(T, B)} <= out.rset


def test_token_ops_are_not_payable():
    out = ToyVM().execute(Transaction(0, A, T, 1, TokenTransfer(B, 0), 0), DictView({}))
    assert out.reason == "non_payable" and out.rset == frozenset()


def test_approve_then_transfer_from():
    state = {TokenBalance(T, A): 20}
    vm, view = ToyVM(), DictView(state)
    assert vm.execute(Transaction(0, A, T, 0, TokenApprove(B, 7)), view).committed
    assert state[TokenAllowance(T, A, B)] == 7
    over = vm.execute(Transaction(1, B, T, 0, TokenTransferFrom(A, B, 8)), view)
    assert over.reason == "allowance"
    ok = vm.execute(Transaction(2, B, T, 0, TokenTransferFrom(A, B, 5)), view)
    assert ok.committed
    assert state[TokenAllowance(T, A, B)] == 2
    assert state[TokenBalance(T, A)] == 15 and state[TokenBalance(T, B)] == 5


def test_unknown_function_reverts():
    reg = safe_exe_registry()
    out = ToyVM(reg).execute(Transaction(0, A, SAFE_CONTRACT, 0, ContractCall("00000000")), DictView({}))
    assert out.reason == "no_function"
    out = ToyVM().execute(Transaction(0, A, SAFE_CONTRACT, 0, ContractCall("00000000")), DictView({}))
    assert out.reason == "no_function"


def test_contract_body_semantics():
    c = Address(0xCC)
    body = (
        ("get", "r0", {"map": 0, "of": "origin"}),
        ("add", "r1", "r0", "value"),
        ("put", {"map": 0, "of": "origin"}, "r1"),
        ("require_gte", "r1", "arg0"),
        ("div", "r2", "r1", 2),
        ("put", {"slot": 5}, "r2"),
    )
    sig = selector("deposit(uint256)")
    reg = ContractRegistry([ContractDef(c, False, {sig: FunctionDef(sig, body)})])
    state = {Balance(A): 100}
    vm = ToyVM(reg)
    out = vm.execute(Transaction(0, A, c, 40, ContractCall(sig, (10,)), 1), DictView(state))
    assert out.committed
    assert state[Slot(c, map_slot(0, A))] == 40 and state[Slot(c, 5)] == 20
    assert state[Balance(A)] == 59 and state[Balance(c)] == 40
    failed = vm.execute(Transaction(1, A, c, 0, ContractCall(sig, (10**6,)), 1), DictView(state))
    assert failed.reason == "require" and failed.wset == frozenset()


def test_safe_exe_functions():
    reg = safe_exe_registry()
    state = {}
    vm = ToyVM(reg)
    blk = safe_exe_block()
    out1 = vm.execute_with_tracking(blk[0], DictView(state))
    assert out1.rset == {X1, Balance(blk[0].origin)}
    assert out1.wset == {X2}


def test_execution_is_deterministic():
    reg = safe_exe_registry()
    blk = safe_exe_block()
    a = ToyVM(reg).execute(blk[1], DictView({X2: 4}))
    b = ToyVM(reg).execute(blk[1], DictView({X2: 4}))
    assert a == b


def test_eager_coinbase_joins_every_write_set():
    vm = ToyVM(coinbase=COINBASE, lazy_coinbase=False)
    state = {Balance(A): 100}
    out = vm.execute(Transaction(0, A, B, 1, NativePayment(), 3), DictView(state))
    assert Balance(COINBASE) in out.wset and Balance(COINBASE) in out.rset
    assert state[Balance(COINBASE)] == 3


payment = st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(0, 300), st.integers(0, 5))


@settings(max_examples=100)
@given(st.lists(payment, max_size=20), st.lists(st.integers(0, 500), min_size=5, max_size=5))
def test_conservation_with_eager_coinbase(txs, balances):
    accts = [Address(0x100 + i) for i in range(5)]
    state = {Balance(a): b for a, b in zip(accts, balances)}
    total = sum(state.values())
    vm = ToyVM(coinbase=COINBASE, lazy_coinbase=False)
    view = DictView(state)
    for k, (o, d, v, f) in enumerate(txs):
        vm.execute(Transaction(k, accts[o], accts[d], v, NativePayment(), f), view)
    assert sum(state.values()) == total


@settings(max_examples=100)
@given(st.lists(payment, min_size=1, max_size=15), st.lists(st.integers(0, 500), min_size=5, max_size=5))
def test_tracked_sets_match_independent_instrumentation(txs, balances):
    accts = [Address(0x100 + i) for i in range(5)]
    state = {Balance(a): b for a, b in zip(accts, balances)}
    vm = ToyVM()
    for k, (o, d, v, f) in enumerate(txs):
        txn = Transaction(k, accts[o], accts[d], v, NativePayment(), f)
        rec = RecordingView(state)
        out = vm.execute_with_tracking(txn, rec)
        assert out.rset == {key for op, key in rec.log if op == "get"}
        assert out.wset == {key for op, key in rec.log if op == "put"}
        assert out.wset == set(out.writes)
