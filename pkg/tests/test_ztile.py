from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbitcert.dynamics import ConfigError, odometer_system
from orbitcert.ratset import IntervalSet, Q, ShapeError
from orbitcert.towers import tower_from_levels
from orbitcert.ztile import (
    GENERATORS,
    GeometryError,
    NestingError,
    SquareTile,
    TilingOffsets,
    UnstabilizedError,
    ZTileConfig,
    build_column_to_tile,
    build_maps,
    cell_order,
    check_nesting,
    kappa_fixed_stage,
    lam_fixed_stage,
    lam_rhs,
    minkowski_excess,
    nesting_offset,
    run_ztile,
    shift_excess,
    shift_excess_closed,
    tile_square,
    verify_tiling,
)
from oracles import fixed_stage_cells
from toys import ztile_cell_heights

ORDERS = ["boustrophedon", "row-major", "column-serpentine"]


@pytest.fixture(scope="module")
def three_stage():
    cfg = ZTileConfig(stages=3, orders=ORDERS)
    maps, reports, _ = build_maps(cfg)
    N, cells = ztile_cell_heights(maps, 2 * cfg.stages, cfg.radix)
    return maps, reports, N, cells


@pytest.mark.parametrize("inner,outer", [(1, 3), (3, 9), (3, 27), (9, 81), (5, 15)])
def test_tiling_covers_outer_square_once(inner, outer):
    offs = tile_square(SquareTile(outer), SquareTile(inner))
    seen = [(x + a, y + b) for a, b in offs.offsets for x, y in SquareTile(inner).points()]
    r = outer // 2
    assert sorted(seen) == sorted((x, y) for x in range(-r, r + 1) for y in range(-r, r + 1))
    assert verify_tiling(SquareTile(inner), SquareTile(outer), offs.offsets)


def test_tiling_geometry_errors():
    with pytest.raises(GeometryError):
        SquareTile(4)
    with pytest.raises(GeometryError):
        tile_square(SquareTile(9), SquareTile(5))
    assert not verify_tiling(SquareTile(3), SquareTile(9), [(0, 0), (3, 0)])


def test_minkowski_excess_of_three_in_nine():
    # (9 + 2)^2 - 81 = 40 new points around the 9×9 square
    assert minkowski_excess(SquareTile(3), SquareTile(9)) == Q(40, 81)


@given(st.integers(0, 4), st.integers(0, 6))
def test_minkowski_excess_closed_form(r, R):
    s, S = 2 * r + 1, 2 * R + 1
    assert minkowski_excess(SquareTile(s), SquareTile(S)) == Q((S + 2 * r) ** 2 - S * S, S * S)


@given(st.integers(0, 5), st.integers(-12, 12), st.integers(-12, 12))
def test_shift_excess_closed_form_matches_enumeration(r, a, b):
    side = 2 * r + 1
    assert shift_excess(SquareTile(side), (a, b)) == shift_excess_closed(side, (a, b))


@pytest.mark.parametrize("name", ORDERS)
@pytest.mark.parametrize("side", [1, 3, 5, 9])
def test_cell_orders_enumerate_the_square(name, side):
    order = cell_order(name, side)
    assert sorted(order) == sorted(SquareTile(side).points())
    if name != "row-major":
        assert all(abs(p[0] - q[0]) + abs(p[1] - q[1]) == 1 for p, q in zip(order, order[1:]))


def test_unknown_order_is_a_config_error():
    with pytest.raises(ConfigError):
        cell_order("hilbert", 3)


def test_nesting_identity_from_nine_to_eighty_one():
    maps, reports, _ = build_maps(ZTileConfig(stages=2))
    rep = reports[0]
    assert rep.checked_identities == sum(len(v) for v in rep.occurrences.values()) * 9
    # every top-stage atom visits all 9 offsets of the 3-into-9 tiling exactly once
    allowed = set(tile_square(SquareTile(9), SquareTile(3)).offsets)
    for occ in rep.occurrences.values():
        assert {o.offset for o in occ} == allowed
    top = maps[1]
    checked = 0
    for t in range(top.height):
        for lab, s in top.atoms:
            lo, hi = next(iter(s))
            x = top.tower.columns[t].apply((lo + hi) / 2)
            try:
                _, ok = nesting_offset(maps, reports, x, 1, 2)
            except UnstabilizedError:
                continue
            assert ok
            checked += 1
    # 9 occurrences of the height-9 column fill all 81 heights
    assert checked == top.height * len(top.atoms)


def test_nesting_check_rejects_foreign_offsets():
    maps, _, offs = build_maps(ZTileConfig(stages=2))
    shifted = TilingOffsets(offs[0].inner, offs[0].outer, tuple((a + 1, b) for a, b in offs[0].offsets))
    with pytest.raises(NestingError, match="not a tiling offset"):
        check_nesting(maps[1], maps[0], shifted)


def test_shape_mismatch_is_rejected():
    maps, _, _ = build_maps(ZTileConfig(stages=1))
    sysm = odometer_system(4, 3)
    tw = tower_from_levels(sysm.map, sysm.canonical_base(9), 9)
    with pytest.raises(ShapeError):
        build_column_to_tile(2, tw, [("a", tw.base)], SquareTile(9), ["boustrophedon"], maps[0])


@pytest.mark.parametrize("k", [1, 2, -3])
def test_lambda_fixed_stage_sets_match_cells(three_stage, k):
    maps, _, N, cells = three_stage
    tables = []
    for m, row in zip(maps, cells):
        vals = []
        for loc in row:
            if loc is None or not 0 <= loc[0] + k < m.height:
                vals.append(None)
                continue
            t, lab = loc
            phi = m.phis[m.sigma[lab]]
            vals.append((phi[t + k][0] - phi[t][0], phi[t + k][1] - phi[t][1]))
        tables.append(vals)
    rep = lam_fixed_stage(maps, k)
    expected = fixed_stage_cells(tables, len(maps))
    for n, got in rep.sets.items():
        # the oracle counts cells with no value at the top stage too; the engine leaves them out
        want = [c for c in expected[n] if tables[-1][c] is not None]
        assert got == IntervalSet((Q(c, N), Q(c + 1, N)) for c in want)


@pytest.mark.parametrize("g", [(1, 0), (0, -1), (2, 1)])
def test_kappa_fixed_stage_sets_match_cells(three_stage, g):
    maps, _, N, cells = three_stage
    tables = []
    for m, row in zip(maps, cells):
        vals = []
        for loc in row:
            if loc is None:
                vals.append(None)
                continue
            t, lab = loc
            phi = m.phis[m.sigma[lab]]
            target = (phi[t][0] + g[0], phi[t][1] + g[1])
            vals.append(phi.index(target) - t if target in phi else None)
        tables.append(vals)
    rep = kappa_fixed_stage(maps, g)
    expected = fixed_stage_cells(tables, len(maps))
    for n, got in rep.sets.items():
        want = [c for c in expected[n] if tables[-1][c] is not None]
        assert got == IntervalSet((Q(c, N), Q(c + 1, N)) for c in want)


def test_generator_moves_shift_tile_positions(three_stage):
    maps, _, N, cells = three_stage
    top, row = maps[-1], cells[-1]
    for s in GENERATORS:
        mv = top.move_map(s)
        for c in range(0, N, 7):
            x = Q(2 * c + 1, 2 * N)
            if x not in mv.domain():
                continue
            y = mv.apply(x)
            t, lab = row[c]
            t2, lab2 = row[int(y * N)]
            phi = top.phis[top.sigma[lab]]
            assert lab2 == lab and phi[t2] == (phi[t][0] + s[0], phi[t][1] + s[1])


def test_default_run_is_clean():
    res = run_ztile(ZTileConfig(stages=3, orders=ORDERS))
    assert res.failures == []
    assert all(c.agrees for c in res.stabilization)


def test_tight_schedule_bounds_pass_but_exceptional_budget_does_not():
    res = run_ztile(ZTileConfig(stages=3, orders=ORDERS, eps_scale=Fraction(1, 64)))
    assert res.bounds and all(b.verdict == "pass" for b in res.bounds)
    sched = ZTileConfig(eps_scale=Fraction(1, 64)).schedule()
    assert lam_rhs(2, 1, sched) < 1
    # the square geometry is fixed: a unit move leaves the side-s square on 1/s of the column,
    # and the two edge bands of height |T_{k-1}| - 1 cover 2(|T_{k-1}| - 1)/|T_k|
    for e in res.exceptional:
        side = 3 ** e.stage
        assert e.leaves_square == Q(1, side)
        assert e.edge_levels == Q(2 * (9 ** (e.stage - 1) - 1), side * side)
        assert not e.ok


def test_schedule_validation_message():
    with pytest.raises(ConfigError, match="schedule invariant"):
        ZTileConfig(eps_scale=Fraction(3)).validate()
