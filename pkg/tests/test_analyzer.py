import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btm.analyzer import (
    ContractDef,
    ContractRegistry,
    FnLabel,
    FunctionDef,
    check_consistency,
    get_cset_strong,
    get_cset_weak,
    ground_truth_cset,
    label_strong,
    label_weak,
    selector,
    soundness_violations,
    validate_block,
)
from btm.core import (
    Address,
    Balance,
    Block,
    ContractCall,
    NativePayment,
    TokenApprove,
    TokenTransfer,
    TokenTransferFrom,
    Transaction,
)
from btm.seq import run_sequential
from btm.workloadgen import WorkloadParams, corpus_contracts, eoa, generate

from btm_testutil import COINBASE, addr, funded, payments, safe_exe_block, safe_exe_registry

TOKEN = Address(0xC0)
CORPUS = corpus_contracts(1)
ORACLE, TOKEN_C, WALLET, BOARD, FWD = (c.address for c in CORPUS)


def corpus_registry():
    return ContractRegistry(CORPUS + [ContractDef(TOKEN, True, {}, "Plain")])


def call(k, origin, dest, name, value=0, args=()):
    return Transaction(k, origin, dest, value, ContractCall(selector(name), args), 1, 0)


def test_weak_labels():
    reg = corpus_registry()
    assert label_weak(Transaction(0, addr(0), addr(1)), reg) == FnLabel.SIMPLE_PAYMENT
    assert label_weak(Transaction(0, addr(0), TOKEN, 0, TokenTransfer(addr(1), 1)), reg) == FnLabel.TRANSFER
    assert label_weak(Transaction(0, addr(0), TOKEN, 0, TokenTransferFrom(addr(1), addr(2), 1)), reg) == FnLabel.TRANSFER_FROM
    assert label_weak(Transaction(0, addr(0), TOKEN, 0, TokenApprove(addr(1), 1)), reg) == FnLabel.APPROVE
    assert label_weak(call(0, addr(0), WALLET, "withdraw(uint256)", args=(1,)), reg) == FnLabel.EXITS_CONTRACT
    # token op on a contract not flagged well-formed
    assert label_weak(Transaction(0, addr(0), WALLET, 0, TokenTransfer(addr(1), 1)), reg) == FnLabel.EXITS_CONTRACT


def test_strong_labels():
    reg = corpus_registry()
    assert label_strong(TOKEN_C, selector("turnEtherToToken()"), reg) == FnLabel.STATIC_EXITS_CONTRACT
    assert label_strong(WALLET, selector("addToWallet()"), reg) == FnLabel.INSIDE_CONTRACT
    assert label_strong(WALLET, selector("withdraw(uint256)"), reg) == FnLabel.EXITS_CONTRACT
    assert label_strong(FWD, selector("forward(address)"), reg) == FnLabel.EXITS_CONTRACT
    assert label_strong(WALLET, "00000000", reg) == FnLabel.EXITS_CONTRACT


def test_strong_label_follows_two_hops():
    a, b, c = Address(0xA0), Address(0xB0), Address(0xCC)
    fa = FunctionDef("aaaaaaaa", (), frozenset(), ((b, "bbbbbbbb"),))
    fb = FunctionDef("bbbbbbbb", (), frozenset(), ((c, "cccccccc"),))
    fc = FunctionDef("cccccccc", (), frozenset({"CALL"}))
    reg = ContractRegistry([ContractDef(a, False, {fa.sig: fa}), ContractDef(b, False, {fb.sig: fb}), ContractDef(c, False, {fc.sig: fc})])
    assert label_strong(a, "aaaaaaaa", reg) == FnLabel.EXITS_CONTRACT
    assert label_strong(b, "bbbbbbbb", reg) == FnLabel.EXITS_CONTRACT
    fc2 = FunctionDef("cccccccc", (), frozenset({"STATICCALL"}))
    reg.add(ContractDef(c, False, {fc2.sig: fc2}))
    assert label_strong(a, "aaaaaaaa", reg) == FnLabel.STATIC_EXITS_CONTRACT


def test_designated_signatures_keep_token_labels():
    f = FunctionDef("a9059cbb", (), frozenset({"SSTORE"}))
    reg = ContractRegistry([ContractDef(TOKEN, True, {f.sig: f})])
    assert label_strong(TOKEN, "a9059cbb", reg) == FnLabel.TRANSFER


def test_weak_four_distinct_rule():
    reg = corpus_registry()
    a1, a2, b1, b2 = (eoa(i) for i in range(4))
    txns = (
        Transaction(0, a1, TOKEN, 0, TokenTransfer(a2, 1), 1),
        Transaction(1, b1, TOKEN, 0, TokenTransfer(b2, 1), 1),
        Transaction(2, b2, TOKEN, 0, TokenTransfer(a1, 1), 1),
    )
    spec = get_cset_weak(Block(txns, COINBASE), reg)
    assert spec.cset[1] == {0}
    assert spec.cset[2] == frozenset()
    assert all(spec.complete)


def test_payments_sharing_destination_conflict():
    block = payments([(0, 5), (1, 5), (2, 3)])
    spec = get_cset_weak(block)
    assert 0 not in spec.cset[1]
    assert spec.cset[2] == {0, 1}


def test_exits_transaction_gets_empty_cset():
    reg = corpus_registry()
    txns = (
        Transaction(0, eoa(0), eoa(1), 1, NativePayment(), 1),
        call(1, eoa(2), WALLET, "withdraw(uint256)", args=(1,)),
        Transaction(2, eoa(3), eoa(4), 1, NativePayment(), 1),
    )
    spec = get_cset_weak(Block(txns, COINBASE), reg)
    assert spec.cset[1] == frozenset() and not spec.complete[1]
    assert spec.cset[2] == {0}


def test_strong_static_order_asymmetry():
    reg = corpus_registry()
    buy = call(0, eoa(1), TOKEN_C, "turnEtherToToken()", value=1)
    add = call(1, eoa(2), WALLET, "addToWallet()", value=1)
    static_first = get_cset_strong(Block((buy, add), COINBASE), reg)
    assert static_first.cset[1] == frozenset()
    add0 = call(0, eoa(2), WALLET, "addToWallet()", value=1)
    buy1 = call(1, eoa(1), TOKEN_C, "turnEtherToToken()", value=1)
    inside_first = get_cset_strong(Block((add0, buy1), COINBASE), reg)
    assert inside_first.cset[1] == {0}


def test_strong_transfer_vs_inside_independent():
    reg = corpus_registry()
    t = Transaction(0, eoa(1), TOKEN, 0, TokenTransfer(eoa(3), 1), 1)
    add = call(1, eoa(2), WALLET, "addToWallet()", value=1)
    spec = get_cset_strong(Block((t, add), COINBASE), reg)
    assert spec.cset[1] == {0}
    assert get_cset_weak(Block((t, add), COINBASE), reg).cset[1] == frozenset()


def test_all_exits_block_is_fully_conservative():
    reg = corpus_registry()
    txns = tuple(call(k, eoa(k), WALLET, "withdraw(uint256)", args=(1,)) for k in range(5))
    spec = get_cset_strong(Block(txns, COINBASE), reg)
    assert all(spec.cset[k] == frozenset() for k in range(5))


def test_eager_coinbase_makes_everything_dependent():
    block = payments([(0, 1), (2, 3), (4, 5)])
    assert get_cset_weak(block).tuple_fraction() == 1.0
    assert get_cset_weak(block, lazy_coinbase=False).tuple_fraction() == 0.0


def test_ground_truth_examples():
    disjoint = payments([(2 * i, 2 * i + 1) for i in range(6)])
    assert ground_truth_cset(disjoint, funded(disjoint)).tuple_fraction() == 1.0
    chain = payments([(0, 1), (1, 2)])
    assert 0 not in ground_truth_cset(chain, funded(chain)).cset[1]
    safe = ground_truth_cset(safe_exe_block(), {}, registry=safe_exe_registry())
    assert safe.cset[1] == frozenset()


def test_registry_json_round_trip():
    reg = corpus_registry()
    again = ContractRegistry.from_json(json.loads(json.dumps(reg.to_json())))
    assert again.to_json() == reg.to_json()
    assert again.function(WALLET, selector("addToWallet()")).body == reg.function(WALLET, selector("addToWallet()")).body


def test_corpus_is_consistent():
    assert check_consistency(ContractRegistry(corpus_contracts())) == []


def test_consistency_catches_undeclared_foreign_write():
    c = Address(0xDD)
    f = FunctionDef("11111111", (("put", {"slot": 0, "at": ORACLE.hex}, 1),), frozenset({"SSTORE"}))
    problems = check_consistency(ContractRegistry([ContractDef(c, False, {f.sig: f})]))
    assert problems and "foreign storage" in problems[0]


def test_validate_block_rejects_token_op_on_eoa():
    block = Block((Transaction(0, eoa(0), eoa(1), 0, TokenTransfer(eoa(2), 1)),), COINBASE)
    with pytest.raises(ValueError):
        validate_block(block, ContractRegistry())


def test_deterministic():
    w = generate(WorkloadParams(kind="mix", block_size=60, seed=5, contract_fraction=0.3, synthetic_work=0))
    assert get_cset_strong(w.block, w.registry) == get_cset_strong(w.block, w.registry)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["erc20", "mix", "p2p", "batch", "generic"]),
    st.integers(1, 120),
    st.sampled_from([0.1, 1.0, 5.0]),
    st.integers(0, 2**32),
    st.sampled_from([0.0, 0.4]),
    st.booleans(),
)
def test_soundness_and_monotonicity(kind, size, alpha, seed, cf, lazy):
    w = generate(WorkloadParams(kind=kind, block_size=size, alpha=alpha, seed=seed, contract_fraction=cf,
                                revert_rate=0.1, synthetic_work=0))
    access = run_sequential(w.block, w.base, registry=w.registry, lazy_coinbase=lazy).access
    weak = get_cset_weak(w.block, w.registry, lazy_coinbase=lazy)
    strong = get_cset_strong(w.block, w.registry, lazy_coinbase=lazy)
    assert soundness_violations(weak, access) == []
    assert soundness_violations(strong, access) == []
    assert weak.is_subset_of(strong)
