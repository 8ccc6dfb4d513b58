import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitcert.dynamics import ConfigError, odometer
from orbitcert.ratset import DistributionVector, IntervalSet, LabeledPartition, Q, dist_distance
from orbitcert.weakmix import (
    BudgetError,
    WeakMixConfig,
    assign_sigma,
    delta_mixing_report,
    full_distribution,
    permutations_for,
    position_check,
    run_construction,
    schedule_next,
    shifted_partition,
)
from oracles import cells_of, joint_counts, odometer_perm, power
from toys import odometer_oracle_for

SMALL = dict(depth=8, stages=1, K1=2, sigma="exact-uniform", partition_sizes=[2], L=[32], M=[128], setwise=True)


@pytest.fixture(scope="module")
def small_run():
    return run_construction(WeakMixConfig(**SMALL))


@pytest.mark.parametrize("K,blocks", [(2, 1), (2, 3), (3, 2)])
def test_exact_uniform_sigma_lists_every_vector_once(K, blocks):
    atom = IntervalSet.interval(0, Q(1, 8))
    sig = assign_sigma([("A", atom)], K, blocks)
    vecs = [v for _, _, v in sig.cells]
    assert sorted(vecs) == sorted(itertools.product(range(1, K + 1), repeat=blocks))
    assert {s.measure for _, s, _ in sig.cells} == {atom.measure / K ** blocks}
    assert sig.max_marginal_gap() == 0


def test_sigma_budget_and_modes():
    atom = [("A", IntervalSet.interval(0, Q(1, 2)))]
    with pytest.raises(BudgetError):
        assign_sigma(atom, 2, 20, budget=1000)
    a = assign_sigma(atom, 3, 4, mode="seeded-iid", seed=9, iid_cells=8)
    b = assign_sigma(atom, 3, 4, mode="seeded-iid", seed=9, iid_cells=8)
    assert [v for *_, v in a.cells] == [v for *_, v in b.cells]
    assert all(1 <= x <= 3 for *_, v in a.cells for x in v)
    with pytest.raises(ConfigError):
        assign_sigma(atom, 2, 2, mode="sobol")


def test_permutations_realise_the_vector():
    perms = permutations_for((1, 2, 1), 8, 2)
    assert [p.v for p in perms] == [1, 2, 1]
    assert all(p.K == 2 and p.L == 8 for p in perms)


@given(st.integers(-12, 12), st.sampled_from([2, 4, 8]))
def test_shifted_partition_matches_cell_oracle(ell, parts):
    depth, N = 6, 64
    p = LabeledPartition.equipartition(parts)
    moved = power(odometer_perm(depth), ell)
    label = [p.label_at(Q(2 * i + 1, 2 * N)) for i in range(N)]
    got = shifted_partition(odometer(depth), ell, p)
    for lab, s in got.atoms:
        assert sorted(cells_of(s, N)) == [i for i in range(N) if label[moved[i]] == lab]


@pytest.mark.parametrize("ell", [1, 3, 16, -5])
def test_delta_mixing_gap_matches_cell_counts(ell):
    depth, N = 6, 64
    p = LabeledPartition.equipartition(2)
    moved = power(odometer_perm(depth), ell)
    label = [p.label_at(Q(2 * i + 1, 2 * N)) for i in range(N)]
    joint = joint_counts(label, [label[moved[i]] for i in range(N)])
    expected = max(abs(joint.get(f"{a}|{b}", 0) - Fraction(1, 4)) for a in p.labels for b in p.labels)
    assert delta_mixing_report(odometer(depth), ell, p).gap == expected


def test_minimal_schedule_is_smallest_power_of_two():
    params = schedule_next(1, 1, 2, 2, Q(1, 4), granularity="pow2")
    assert params.conforming
    # brute force over powers of two: K*^3/L < eps, then M > L/eps with L | M
    L = next(2 ** e for e in range(1, 20) if Q(8, 2 ** e) < Q(1, 4))
    M = next(2 ** e for e in range(1, 30) if 2 ** e > L * 4 and 2 ** e % L == 0)
    assert (params.L, params.M) == (L, M)


def test_position_gaps_match_cell_oracle(small_run):
    factor = small_run.cocycle.factors[0]
    orc = odometer_oracle_for(factor, SMALL["depth"])
    p = LabeledPartition.equipartition(2)
    ref = full_distribution(p)
    base = sorted(orc.paths)
    names = [orc.label(x) for x in _column(orc, base[0])]
    mu = factor.tower.base.measure
    K, L, M = factor.K, factor.L, factor.height
    for m in range(M - L):
        chk = position_check(factor.cells, mu, names, ref, K, L, m, L, Q(1, 4), check_uniform=True)
        joint = orc.joint(base, m, L)
        expected = dist_distance(
            DistributionVector((f"{a}|{b}", joint.get((a, b), 0)) for a in p.labels for b in p.labels),
            ref.product(ref))
        assert chk.gap == expected
        assert chk.q_measures == orc.translation_pairs(base, m, L)


def _column(orc, b):
    """Cells of the old column over base cell b, in R order."""
    order = sorted(range(len(orc.old[b])), key=lambda m: orc.old[b][m])
    return [orc.paths[b][m] for m in order]


def test_stage_disagreement_matches_oracle(small_run):
    factor = small_run.cocycle.factors[0]
    orc = odometer_oracle_for(factor, SMALL["depth"])
    entry = small_run.stages[0].disagreements[0]
    a, b = power(orc.S, entry.ell), power(orc.R, entry.ell)
    assert entry.measure == Fraction(sum(x != y for x, y in zip(a, b)), orc.N)
    assert entry.ok


def test_small_designated_report_is_clean(small_run):
    assert small_run.aborted is None
    assert small_run.failures() == []
    des = small_run.stages[0].designated
    assert des is not None and des.exact
    for atom in des.atoms:
        assert atom.positions_ok and atom.q_uniform and atom.setwise_match
        assert atom.max_position_gap < atom.position_bound
    assert small_run.to_json()["designated_stages"] == [1]


@pytest.mark.parametrize("eps,msg", [
    ([Q(1, 2)], "eps_n < 2^-n fails at n=1"),
    ([Q(1, 4), Q(1, 4)], "fails at n=2"),
])
def test_config_rejects_bad_schedules(eps, msg):
    with pytest.raises(ConfigError, match=msg.replace("^", r"\^")):
        WeakMixConfig(epsilons=eps, stages=1).validate()


def test_budget_abort_is_reported_not_raised():
    res = run_construction(WeakMixConfig(**{**SMALL, "cell_budget": 4}))
    assert res.aborted and "budget" in res.aborted
