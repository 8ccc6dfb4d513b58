from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitcert.dynamics import (
    ConfigError,
    IncompleteReturnError,
    NotABijectionError,
    PartialTranslation,
    PiecewiseTranslation,
    first_return,
    flatten_powers,
    iterate_preimage,
    odometer,
    odometer_system,
    power_agreement,
    pullback_partition,
    rank_one_system,
)
from orbitcert.ratset import IntervalSet, LabeledPartition, Q, StepFunction
from oracles import odometer_perm, power


def as_perm(f: PiecewiseTranslation, N: int) -> list[int]:
    out = []
    for i in range(N):
        y = f.apply(Q(i, N))
        assert (y * N).denominator == 1
        out.append(int(y * N))
    return out


@pytest.mark.parametrize("depth,radix", [(1, 2), (3, 2), (6, 2), (2, 3), (3, 3)])
def test_odometer_matches_digit_oracle(depth, radix):
    f = odometer(depth, radix)
    assert as_perm(f, radix ** depth) == odometer_perm(depth, radix)
    finer = radix ** (depth + 1)
    assert as_perm(f, finer) == odometer_perm(depth, radix, depth + 1)


@given(st.integers(-20, 20), st.integers(-20, 20))
def test_group_law(a, b):
    f = odometer(5)
    assert f.power(a).compose(f.power(b)) == f.power(a + b)


def test_inverse_and_bijection():
    f = odometer(7)
    assert f.is_bijection()
    assert f.compose(f.inverse()) == PiecewiseTranslation.identity()


def test_not_a_bijection_rejected():
    with pytest.raises(NotABijectionError):
        PiecewiseTranslation([(0, Q(1, 2), Q(1, 4)), (Q(1, 2), 1, 0)])


@pytest.mark.parametrize("depth", [2, 4, 8])
def test_kac_identity_on_odometer(depth):
    f = odometer(depth)
    base = IntervalSet.interval(0, Q(1, 2 ** depth))
    rs = first_return(f, base, 2 ** depth + 1)
    # Σ t·μ(return cell) recovers the measure of the orbit union, here everything
    assert rs.kac_sum() == 1
    assert IntervalSet.union_all(c for c, _ in rs.cells) == base


def test_kac_with_larger_base():
    f = odometer(6)
    base = IntervalSet([(0, Q(1, 8)), (Q(1, 2), Q(9, 16))])
    rs = first_return(f, base, 64)
    assert rs.kac_sum() == 1


def test_first_return_budget():
    f = odometer(6)
    with pytest.raises(IncompleteReturnError):
        first_return(f, IntervalSet.interval(0, Q(1, 64)), 3)


def test_rank_one_with_spacers_is_measure_preserving():
    sys_ = rank_one_system([2, 3], spacers=[[0, 1], [1, 0, 2]])
    f = sys_.map
    assert f.is_bijection()
    assert sum(hi - lo for lo, hi in sys_.levels) == 1


def test_rank_one_rejects_bad_cuts():
    with pytest.raises(ConfigError):
        rank_one_system([1, 2])


@given(st.integers(-9, 9), st.sets(st.integers(0, 31), max_size=32))
def test_iterate_preimage_matches_cells(k, cells):
    N = 32
    f = odometer(5)
    a = IntervalSet((Q(c, N), Q(c + 1, N)) for c in cells)
    perm = power(odometer_perm(5), k)
    expected = {i for i in range(N) if perm[i] in cells}
    got = iterate_preimage(f, a, k)
    assert got == IntervalSet((Q(c, N), Q(c + 1, N)) for c in expected)


@pytest.mark.parametrize("k", [0, 1, 2, 5, -3])
def test_power_agreement_matches_direct_powers(k):
    f = odometer(5)
    g = f.compose(f).compose(f.inverse())  # same map written differently
    g = PiecewiseTranslation.from_partial(g)
    h = flatten_powers(f, StepFunction([(0, Q(1, 2), 1), (Q(1, 2), 1, 3)]))
    for other in (g, h):
        direct = f.power(k).agrees_with(other.power(k)) if k else IntervalSet.full()
        assert power_agreement(f, other, k) == direct


def test_pullback_partition():
    f = odometer(3)
    p = LabeledPartition.equipartition(2)
    q = pullback_partition(f, p)
    for lab, s in q.atoms:
        assert f.apply_set(s) == p[lab]


def test_partial_translation_compose_and_pull():
    a = PartialTranslation([(0, Q(1, 4), Q(1, 2))])
    b = PartialTranslation([(Q(1, 2), Q(3, 4), Q(-1, 2))])
    assert b.compose(a) == PartialTranslation.identity_on(IntervalSet.interval(0, Q(1, 4)))
    h = StepFunction([(Q(1, 2), Q(3, 4), "x")])
    assert a.pull(h) == StepFunction([(0, Q(1, 4), "x")])


def test_orbit_window():
    f = odometer(3)
    orb = f.orbit(Fraction(0), 8)
    assert sorted(orb[:8]) == [Q(i, 8) for i in range(8)]
