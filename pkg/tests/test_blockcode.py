import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitcert.blockcode import (
    BlockedCocycle,
    EpsilonViolationError,
    GeometricSchedule,
    GeometryError,
    PreconditionError,
    fixed_stage_rhs,
    fixed_stage_sets,
    inverse_fixed_stage_bounds,
    make_jkl_permutation,
    rotation,
)
from orbitcert.dynamics import odometer_system
from orbitcert.ratset import IntervalSet, Q
from orbitcert.towers import tower_from_levels
from oracles import cocycle_table, fixed_stage_cells, inverse_cocycle_table
from toys import mid, oracle_actions, toy_stages


@st.composite
def jkl_params(draw):
    L = draw(st.integers(1, 12))
    J = draw(st.integers(0, L))
    K = draw(st.integers(0, L))
    u = draw(st.integers(0, L - J))
    lo, hi = max(-K, -u), min(K, L - J - u)
    v = draw(st.integers(lo, hi)) if lo <= hi else 0
    return J, K, L, u, v


@given(jkl_params())
def test_jkl_permutation_is_bijection_translating_rigid_block(params):
    J, K, L, u, v = params
    if abs(v) > K:
        return
    p = make_jkl_permutation(J, K, L, u, v)
    assert sorted(p.table) == list(range(1, L + 1))
    assert all(p(w) == w + v for w in p.rigid_block)
    assert all(p.inv(p(w)) == w for w in range(1, L + 1))


@pytest.mark.parametrize("args,err", [
    ((3, 1, 6, 0, 2), PreconditionError),
    ((5, 2, 6, 2, 0), GeometryError),
    ((4, 2, 6, 1, 2), GeometryError),
])
def test_jkl_permutation_errors(args, err):
    with pytest.raises(err):
        make_jkl_permutation(*args)


def test_explicit_filler():
    p = make_jkl_permutation(2, 1, 4, 1, 1, filler={1: 2, 4: 1})
    assert p.table == (2, 3, 4, 1)
    with pytest.raises(GeometryError):
        make_jkl_permutation(2, 1, 4, 1, 1, filler={1: 2, 4: 2})


def test_rotation_shape():
    r = rotation(8, 2, 1)
    assert (r.J, r.K, r.L, r.v) == (6, 2, 8, 1)


def test_off_tower_mass_above_epsilon_is_rejected():
    sysm = odometer_system(5)
    base = IntervalSet.interval(0, Q(1, 64))
    tw = tower_from_levels(sysm.map, base, 8)
    with pytest.raises(EpsilonViolationError):
        BlockedCocycle(1, tw, 1, 4, Q(1, 4), [(base, [rotation(4, 1, 1)] * 2)])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_derived_actions_match_cell_oracle(seed):
    stage = toy_stages(seed=seed)
    N, acts = oracle_actions(stage, 6)
    for n, A in enumerate(acts):
        E = stage.action(n)
        assert [E.apply(mid(i, N)) for i in range(N)] == [mid(A[i], N) for i in range(N)]


@pytest.mark.parametrize("k", [1, -1, 2, -3, 5])
def test_cocycle_values_and_fixed_sets_match_cell_oracle(k):
    stage = toy_stages(seed=3)
    N, acts = oracle_actions(stage, 6)
    S = acts[0]
    fwd, bwd = [], []
    for n in range(1, len(acts)):
        o = cocycle_table(S, acts[n], k, N // 2)
        oi = inverse_cocycle_table(S, acts[n], k, N // 2)
        e, ei = stage.alpha_step(n, k), stage.alpha_inverse_step(n, k)
        assert [e.value_at(mid(i, N)) for i in range(N)] == o
        assert [ei.value_at(mid(i, N)) for i in range(N)] == oi
        fwd.append(o)
        bwd.append(oi)
    for tables, inverse in ((fwd, False), (bwd, True)):
        rep = fixed_stage_sets(stage, k, 2, 0, inverse=inverse)
        for n, cells in fixed_stage_cells(tables, 2).items():
            assert rep.sets[n] == IntervalSet((Q(c, N), Q(c + 1, N)) for c in cells)


def test_cocycle_identity_and_inverse_pointwise():
    stage = toy_stages(depth=7, stages=3, blocks=(2, 2, 2), iid_cells=4, seed=5)
    S = stage.base
    rng = random.Random(11)
    for _ in range(200):
        x = Q(rng.randrange(1 << 20), 1 << 20)
        a, b = rng.randint(-8, 8), rng.randint(-8, 8)
        # α(x, a+b) = α(S^b x, a) + α(x, b)
        assert stage.evaluate(x, a + b) == stage.evaluate(S.power(b).apply(x), a) + stage.evaluate(x, b)
        j = stage.evaluate(x, a)
        assert stage.evaluate_inverse(x, j) == a
        assert stage.action().power(j).apply(x) == S.power(a).apply(x)


@given(st.integers(1, 6), st.integers(2, 5), st.integers(1, 3))
def test_schedule_tails_dominate_partial_sums(m, L1, ratio):
    sched = GeometricSchedule(Q(1), Q(1, 2), 2 ** L1, ratio + 1, 1)
    head = sum((sched.eps(i) for i in range(m, m + 30)), Q(0))
    assert head < sched.eps_tail(m)
    assert sched.eps_tail(m) - head == sched.eps(m + 30) / (1 - sched.eps_ratio)
    head_l = sum((Q(1, sched.L(i)) for i in range(m, m + 30)), Q(0))
    assert head_l < sched.inv_L_tail(m)


def test_fixed_stage_rhs_values():
    sched = GeometricSchedule(Q(1), Q(1, 2), 4, 2, 1)
    # 2·Σ_{i≥1} 2^-i + (1 + 0)·Σ_{i≥1} 1/(4·2^(i-1)) = 2 + 1/2
    assert fixed_stage_rhs(2, 1, sched) == Q(5, 2)
    # n = 3: 2·(1/2) + (1 + 2·4)·(1/4) = 13/4
    assert fixed_stage_rhs(3, 1, sched) == Q(13, 4)
    lo, hi = inverse_fixed_stage_bounds(3, 1, sched)
    exact_head = sum((Q(1, sched.L(i) - sched.K(i)) for i in range(2, 10)), Q(0))
    # Σ_{i≥10} 1/L_i = 2/L_10 bounds the remaining 1/(L_i - K_i) from below, twice that from above
    assert lo == 1 + exact_head + Q(2, sched.L(10))
    assert hi == 1 + exact_head + Q(4, sched.L(10))
