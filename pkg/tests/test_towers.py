import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitcert.dynamics import odometer_system
from orbitcert.ratset import IntervalSet, LabeledPartition, Q
from orbitcert.towers import (
    NotATowerError,
    SearchExhaustedError,
    evaluate_conditions,
    prune_base,
    pure_atoms,
    search_strong_tower,
    tower_from_levels,
)
from oracles import cells_of, odometer_perm


@pytest.mark.parametrize("depth,height", [(4, 4), (6, 8), (6, 64), (8, 32)])
def test_canonical_tower_is_exact(depth, height):
    sysm = odometer_system(depth)
    tw = tower_from_levels(sysm.map, sysm.canonical_base(height), height)
    assert tw.achieved_epsilon == 0
    for i in range(height):
        for j in range(i + 1, height):
            assert tw.level(i).isdisjoint(tw.level(j))
    assert tw.union == IntervalSet.full()


def test_overlapping_levels_raise_and_pruning_repairs():
    f = odometer_system(4).map
    base = IntervalSet.interval(0, Q(1, 4))  # returns after 4 steps
    with pytest.raises(NotATowerError):
        tower_from_levels(f, base, 8)
    pruned = prune_base(f, base, 8)
    tw = tower_from_levels(f, pruned, 8)
    assert tw.base.issubset(base)


def test_search_reports_exhaustion():
    f = odometer_system(3).map
    with pytest.raises(SearchExhaustedError):
        search_strong_tower(f, 16, Q(1, 4), candidates=[IntervalSet.interval(0, Q(1, 8))])


def test_search_prefers_exact_candidate():
    sysm = odometer_system(6)
    tw, rep = search_strong_tower(sysm.map, 16, Q(1, 8), block_length=4, candidates=[sysm.canonical_base(16)])
    assert tw.achieved_epsilon == 0 and rep.epsilon_ok


@given(st.sampled_from([1, 2, 4, 8]), st.sampled_from([2, 4, 8]))
def test_pure_atoms_match_brute_force_names(parts, height):
    depth = 5
    N = 2 ** depth
    sysm = odometer_system(depth)
    tw = tower_from_levels(sysm.map, sysm.canonical_base(height), height)
    p = LabeledPartition.equipartition(parts)
    perm = odometer_perm(depth)
    names = {}
    for b in cells_of(tw.base, N):
        word, x = [], b
        for _ in range(height):
            word.append(p.label_at(Q(2 * x + 1, 2 * N)))
            x = perm[x]
        names.setdefault(tuple(word), []).append(b)
    atoms = pure_atoms(tw, p)
    got = {a.name: sorted(cells_of(a.set, N)) for a in atoms}
    assert got == {k: sorted(v) for k, v in names.items()}


def test_conditions_report_good_fraction():
    sysm = odometer_system(6)
    tw = tower_from_levels(sysm.map, sysm.canonical_base(8), 8)
    good = IntervalSet.interval(0, Q(1, 2))
    rep = evaluate_conditions(tw, Q(1, 4), [("base", tw.base)], good_set=good, good_threshold=Q(1, 4))
    # each column of height 8 on the dyadic odometer spends exactly half its time in [0, 1/2)
    assert rep.atoms[0].good_fraction == Q(1, 2)
    assert rep.good_ok and rep.all_ok
