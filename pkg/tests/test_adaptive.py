import pytest
from hypothesis import given
from hypothesis import strategies as st

from btm.adaptive import Policy, conflict_metrics, run_adaptive
from btm.analyzer import get_cset_weak
from btm.core import ConflictSpec
from btm.seq import run_sequential
from btm.workloadgen import WorkloadParams, generate


def test_full_spec_metrics():
    assert conflict_metrics(10, ConflictSpec.full(10)) == {
        "dependent_pair_fraction": 0.0, "independent_txn_fraction": 1.0, "longest_chain": 1,
    }


@pytest.mark.parametrize("n", [1, 2, 7, 300])
def test_empty_spec_metrics(n):
    m = conflict_metrics(n, ConflictSpec.empty(n))
    assert m["dependent_pair_fraction"] == (1.0 if n > 1 else 0.0)
    assert m["independent_txn_fraction"] == pytest.approx(1 / n)
    assert m["longest_chain"] == n


def test_best_case_block_profile():
    # 136 transactions: a 50-long chain, 51 fully independent, 35 depending on T0 only
    n = 136
    chain = list(range(50))
    indep = list(range(50, 101))
    rest = list(range(101, 136))
    masks = [0] * n
    for k in range(n):
        allp = (1 << k) - 1
        if k in chain:
            masks[k] = allp & ~(1 << (k - 1)) if k else 0
        elif k in indep:
            masks[k] = allp
        else:
            masks[k] = allp & ~1
    m = conflict_metrics(n, ConflictSpec(n, masks))
    assert m["independent_txn_fraction"] == pytest.approx(52 / 136)
    assert round(m["independent_txn_fraction"], 2) == 0.38
    assert m["longest_chain"] == 50


@st.composite
def specs(draw):
    n = draw(st.integers(1, 40))
    return ConflictSpec(n, [draw(st.integers(0, (1 << k) - 1)) if k else 0 for k in range(n)])


@given(specs())
def test_longest_chain_matches_dp(spec):
    depth = []
    for k in range(spec.n):
        depth.append(1 + max((depth[i] for i in spec.dependencies(k)), default=0))
    m = conflict_metrics(spec.n, spec)
    assert m["longest_chain"] == max(depth)
    pairs = spec.n * (spec.n - 1) // 2
    assert m["dependent_pair_fraction"] == pytest.approx(
        sum(len(spec.dependencies(k)) for k in range(spec.n)) / pairs if pairs else 0.0
    )


def test_dense_path_matches_dp():
    n = 400
    import random

    rng = random.Random(0)
    spec = ConflictSpec(n, [rng.getrandbits(k) if k else 0 for k in range(n)])
    depth = []
    for k in range(n):
        depth.append(1 + max((depth[i] for i in spec.dependencies(k)), default=0))
    assert conflict_metrics(n, spec)["longest_chain"] == max(depth)


def _workload(alpha, n=200):
    return generate(WorkloadParams(kind="erc20", block_size=n, alpha=alpha, seed=1, synthetic_work=0))


def test_high_conflict_chooses_sequential():
    w = _workload(5.0)
    rep = run_adaptive(w.block, w.base, get_cset_weak(w.block, w.registry), 4, registry=w.registry)
    assert rep.extra["choice"] == "seq"
    assert rep.final_state == run_sequential(w.block, w.base, registry=w.registry).final_state


def test_low_conflict_chooses_parallel():
    w = _workload(0.1)
    spec = get_cset_weak(w.block, w.registry)
    for engine in ("opt", "dag"):
        rep = run_adaptive(w.block, w.base, spec, 4, Policy(parallel_engine=engine), registry=w.registry)
        assert rep.extra["choice"] == engine
        assert rep.final_state == run_sequential(w.block, w.base, registry=w.registry).final_state


def test_small_block_is_sequential():
    w = _workload(0.1, n=1)
    rep = run_adaptive(w.block, w.base, ConflictSpec.full(1), 4, registry=w.registry)
    assert rep.extra["choice"] == "seq"


def test_policy_validation():
    with pytest.raises(ValueError):
        Policy(parallel_engine="seq")
    with pytest.raises(ValueError):
        Policy(threshold_high=1.5)
