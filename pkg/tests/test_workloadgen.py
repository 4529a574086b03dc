import json
import random
import statistics

import pytest

from btm.adaptive import conflict_metrics
from btm.analyzer import ground_truth_cset, validate_block
from btm.core import ContractCall, TokenTransfer, block_to_json
from btm.seq import run_sequential
from btm.workloadgen import KINDS, WorkloadParams, generate, pareto_index


def test_pareto_index_concentration_grows_with_alpha():
    def share0(alpha):
        rng = random.Random(1)
        return sum(pareto_index(rng, alpha, 100) == 0 for _ in range(20000)) / 20000

    # P(index 0) = P(U > 2**-alpha) = 1 - 2**-alpha
    assert share0(5.0) == pytest.approx(1 - 2**-5, abs=0.01)
    assert share0(1.0) == pytest.approx(0.5, abs=0.02)
    assert share0(0.1) == pytest.approx(1 - 2**-0.1, abs=0.01)


def test_pareto_index_in_range():
    rng = random.Random(3)
    assert all(0 <= pareto_index(rng, a, 7) < 7 for a in (0.01, 0.1, 1, 50) for _ in range(500))


@pytest.mark.parametrize("kind", KINDS)
def test_determinism_byte_identical(kind):
    p = WorkloadParams(kind=kind, block_size=50, alpha=1.0, seed=11, contract_fraction=0.2)
    a, b = generate(p), generate(p)
    assert json.dumps(block_to_json(a.block)) == json.dumps(block_to_json(b.block))
    assert a.base == b.base and a.registry.to_json() == b.registry.to_json()


@pytest.mark.parametrize("kind", KINDS)
def test_single_transaction_block(kind):
    w = generate(WorkloadParams(kind=kind, block_size=1))
    assert len(w.block) == 1
    validate_block(w.block, w.registry)


@pytest.mark.parametrize("kind", KINDS)
def test_base_state_avoids_spurious_reverts(kind):
    w = generate(WorkloadParams(kind=kind, block_size=200, alpha=1.0, seed=2, synthetic_work=0))
    res = run_sequential(w.block, w.base, registry=w.registry)
    assert all(o.committed for o in res.outcomes)


def test_revert_injection():
    w = generate(WorkloadParams(kind="p2p", block_size=200, seed=2, revert_rate=0.5, synthetic_work=0))
    res = run_sequential(w.block, w.base)
    assert 50 < sum(not o.committed for o in res.outcomes) < 150


def test_erc20_paper_shape():
    w = generate(WorkloadParams(kind="erc20", block_size=10000, alpha=0.1, seed=0))
    assert len(w.block) == 10000
    assert w.block.meta["clusters"] == 10000 and w.block.meta["accounts"] == 10000
    assert all(isinstance(t.payload, TokenTransfer) for t in w.block)
    # one account per cluster: sender and receiver coincide
    assert all(t.origin == t.payload.target for t in w.block)
    assert all(t.synthetic_work == 2000 for t in w.block)


def test_mix_shape():
    w = generate(WorkloadParams(kind="mix", block_size=400, seed=4))
    assert w.block.meta["clusters"] == 100
    tokens = sum(isinstance(t.payload, TokenTransfer) for t in w.block)
    assert 150 < tokens < 250


def test_contract_fraction():
    w = generate(WorkloadParams(kind="p2p", block_size=300, seed=4, contract_fraction=0.5))
    calls = sum(isinstance(t.payload, ContractCall) for t in w.block)
    assert 100 < calls < 200


def test_invalid_params():
    for bad in (dict(block_size=0), dict(alpha=0), dict(alpha=-1), dict(kind="nope"), dict(revert_rate=2),
                dict(seed=-1), dict(clusters=0)):
        with pytest.raises(ValueError):
            WorkloadParams(**bad)


def test_chain_longer_at_high_alpha():
    def chain(alpha):
        w = generate(WorkloadParams(kind="erc20", block_size=300, alpha=alpha, seed=7, synthetic_work=0))
        return conflict_metrics(300, ground_truth_cset(w.block, w.base, registry=w.registry))["longest_chain"]

    assert chain(5.0) > chain(0.1)


@pytest.mark.parametrize("kind", KINDS)
def test_conflict_edges_grow_with_alpha(kind):
    def edges(alpha):
        out = []
        for seed in range(20):
            w = generate(WorkloadParams(kind=kind, block_size=80, alpha=alpha, seed=seed, synthetic_work=0))
            spec = ground_truth_cset(w.block, w.base, registry=w.registry)
            out.append(sum(spec.comp_size(k) for k in range(spec.n)))
        return statistics.mean(out)

    assert edges(5.0) > edges(0.1)
