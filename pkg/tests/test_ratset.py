from fractions import Fraction

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from orbitcert.ratset import (
    IntervalSet,
    LabeledPartition,
    PartitionError,
    Q,
    StepFunction,
    dist_distance,
    distribution,
    frac,
    frac_str,
    joint_distribution,
    overlay,
    stack,
)
from oracles import cells_of, joint_counts

DEN = 64


@st.composite
def grid_sets(draw, den: int = DEN):
    cells = draw(st.sets(st.integers(0, den - 1), max_size=den))
    return IntervalSet((Q(c, den), Q(c + 1, den)) for c in cells), cells


@st.composite
def rational_sets(draw):
    pts = draw(st.lists(st.fractions(min_value=0, max_value=1, max_denominator=40), max_size=10))
    pts = sorted(set(pts))
    pairs = [(pts[i], pts[i + 1]) for i in range(0, len(pts) - 1, 2)]
    return IntervalSet(pairs)


@given(rational_sets(), rational_sets())
def test_measure_is_additive(a, b):
    assert (a | b).measure + (a & b).measure == a.measure + b.measure
    assert (a - b).measure + (a & b).measure == a.measure


@given(rational_sets(), rational_sets())
def test_de_morgan_and_complement(a, b):
    assert (a | b).complement() == a.complement() & b.complement()
    assert a.complement().complement() == a
    assert a ^ b == (a - b) | (b - a)


@given(rational_sets())
def test_canonical_form(a):
    iv = a.intervals
    assert all(lo < hi for lo, hi in iv)
    assert all(iv[i][1] < iv[i + 1][0] for i in range(len(iv) - 1))


@given(grid_sets(), grid_sets())
def test_boolean_ops_match_cell_sets(pa, pb):
    (a, ca), (b, cb) = pa, pb
    assert set(cells_of(a | b, DEN)) == ca | cb
    assert set(cells_of(a & b, DEN)) == ca & cb
    assert set(cells_of(a - b, DEN)) == ca - cb
    assert (a & b).measure == Fraction(len(ca & cb), DEN)


@given(rational_sets(), st.integers(1, 7))
def test_split_equal_partitions_the_set(a, parts):
    pieces = a.split_equal(parts)
    assert len(pieces) == parts
    assert IntervalSet.union_all(pieces) == a
    assert all(p.measure == a.measure / parts for p in pieces)
    for i in range(parts):
        for j in range(i + 1, parts):
            assert pieces[i].isdisjoint(pieces[j])


@given(rational_sets(), st.fractions(min_value=-1, max_value=1, max_denominator=30))
def test_translate_preserves_measure(a, t):
    iv = a.intervals
    assume(not iv or (iv[0][0] + t >= 0 and iv[-1][1] + t <= 1))
    assert a.translate(t).measure == a.measure
    assert a.translate(t).translate(-t) == a


def test_translate_out_of_range_raises():
    with pytest.raises(ValueError):
        IntervalSet.interval(Q(1, 2), 1).translate(Q(1, 4))


def test_json_roundtrip():
    a = IntervalSet([(Q(1, 3), Q(1, 2)), (Q(3, 4), 1)])
    assert IntervalSet.from_json(a.to_json()) == a
    assert a.to_json() == [["1/3", "1/2"], ["3/4", "1"]]


@pytest.mark.parametrize("bad", [0.5, True, None])
def test_frac_rejects_inexact(bad):
    with pytest.raises(TypeError):
        frac(bad)


@pytest.mark.parametrize("v,s", [(Q(3, 8), "3/8"), (Q(4, 2), "2"), (Q(-1, 3), "-1/3")])
def test_frac_str(v, s):
    assert frac_str(v) == s
    assert frac(s) == v


def test_partition_rejects_overlap_and_gaps():
    a = IntervalSet.interval(0, Q(1, 2))
    with pytest.raises(PartitionError):
        LabeledPartition([("a", a), ("b", IntervalSet.interval(Q(1, 4), 1))])
    with pytest.raises(PartitionError):
        LabeledPartition([("a", a)])
    with pytest.raises(PartitionError):
        LabeledPartition([("a", a), ("a", a.complement())])


@given(st.integers(1, 6), st.integers(1, 6))
def test_join_is_a_partition_and_matches_counts(m, n):
    p, q = LabeledPartition.equipartition(m), LabeledPartition.equipartition(n)
    j = p.join(q)
    assert sum(s.measure for _, s in j.atoms) == 1
    assert j.refines(p) and j.refines(q)
    N = m * n
    lp = [p.label_at(Q(2 * i + 1, 2 * N)) for i in range(N)]
    lq = [q.label_at(Q(2 * i + 1, 2 * N)) for i in range(N)]
    expected = joint_counts(lp, lq)
    got = {lab: mass for lab, mass in joint_distribution(p, q).entries if mass}
    assert got == expected


def test_distribution_and_distance():
    p = LabeledPartition.equipartition(4)
    d = distribution(IntervalSet.interval(0, Q(3, 4)), p)
    assert d.masses == (Q(1, 3), Q(1, 3), Q(1, 3), 0)
    assert dist_distance(d, distribution(IntervalSet.full(), p)) == Q(1, 4)


def test_step_function_merges_and_overlays():
    f = StepFunction([(0, Q(1, 2), 1), (Q(1, 2), 1, 1)])
    assert len(f) == 1
    g = StepFunction([(0, Q(1, 4), 2), (Q(1, 4), 1, 3)])
    h = overlay(f, g, lambda a, b: a + b)
    assert h.level_sets() == {3: IntervalSet.interval(0, Q(1, 4)), 4: IntervalSet.interval(Q(1, 4), 1)}
    s = stack([f, g])
    assert s.value_at(Q(1, 8)) == (1, 2)
    assert h.integral() == Q(3, 4) + 3


def test_step_function_rejects_overlap():
    with pytest.raises(ValueError):
        StepFunction([(0, Q(1, 2), 1), (Q(1, 4), 1, 2)])
