"""Column-to-tile maps: tower columns laid onto centered lattice squares, the induced
ℤ² generator moves, their cocycles and the fixed-stage bookkeeping.

Lattice points are (x, y) integer tuples. A stage is a tower of S together with a
partition of its base into atoms, a family of bijections φ_i from heights to the
square and an assignment atom ↦ i.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .blockcode import BoundVerdict, _verdict
from .dynamics import ConfigError, PartialTranslation, odometer_system
from .entropy import EntropyLedger, EntropyCheck, TailSchedule, entropy_check
from .ratset import (
    ONE,
    Q,
    ZERO,
    IntervalSet,
    LabeledPartition,
    ShapeError,
    StepFunction,
    frac,
    frac_str,
    overlay,
)
from .towers import Tower, pure_atoms, tower_from_levels

Point = tuple[int, int]
GENERATORS: tuple[Point, ...] = ((1, 0), (0, 1))


class GeometryError(ValueError):
    pass


class NestingError(ValueError):
    def __init__(self, atom: str, occurrence: int | None, reason: str):
        self.atom = atom
        self.occurrence = occurrence
        where = f"atom {atom}" + (f", occurrence {occurrence}" if occurrence is not None else "")
        super().__init__(f"nesting violated at {where}: {reason}")


class UnstabilizedError(RuntimeError):
    """The requested move or cocycle value is undefined at the last built stage."""


def _add(p: Point, q: Point) -> Point:
    return (p[0] + q[0], p[1] + q[1])


def _sub(p: Point, q: Point) -> Point:
    return (p[0] - q[0], p[1] - q[1])


# ---------------------------------------------------------------- lattice squares

@dataclass(frozen=True)
class SquareTile:
    side: int

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise GeometryError(f"square side must be an odd positive integer, got {self.side}")

    @property
    def radius(self) -> int:
        return (self.side - 1) // 2

    @property
    def size(self) -> int:
        return self.side * self.side

    def __contains__(self, p: Point) -> bool:
        r = self.radius
        return -r <= p[0] <= r and -r <= p[1] <= r

    def points(self) -> list[Point]:
        r = self.radius
        return [(x, y) for y in range(-r, r + 1) for x in range(-r, r + 1)]

    def point_set(self) -> frozenset[Point]:
        return frozenset(self.points())


def row_major(side: int) -> list[Point]:
    r = (side - 1) // 2
    return [(x, y) for y in range(-r, r + 1) for x in range(-r, r + 1)]


def boustrophedon(side: int) -> list[Point]:
    """Rows bottom to top, alternating direction, so consecutive entries are lattice neighbors."""
    r = (side - 1) // 2
    out = []
    for i, y in enumerate(range(-r, r + 1)):
        xs = range(-r, r + 1) if i % 2 == 0 else range(r, -r - 1, -1)
        out.extend((x, y) for x in xs)
    return out


def column_serpentine(side: int) -> list[Point]:
    return [(y, x) for x, y in boustrophedon(side)]


ORDERS: dict[str, Callable[[int], list[Point]]] = {
    "boustrophedon": boustrophedon,
    "row-major": row_major,
    "column-serpentine": column_serpentine,
}


def cell_order(name: str, side: int) -> list[Point]:
    try:
        return ORDERS[name](side)
    except KeyError:
        raise ConfigError(f"unknown cell order {name!r}; choose from {sorted(ORDERS)}") from None


@dataclass(frozen=True)
class TilingOffsets:
    inner: SquareTile
    outer: SquareTile
    offsets: tuple[Point, ...]

    def to_json(self) -> dict:
        return {"inner_side": self.inner.side, "outer_side": self.outer.side,
                "offsets": [list(c) for c in self.offsets]}


def verify_tiling(inner: SquareTile, outer: SquareTile, offsets: Iterable[Point]) -> bool:
    """Every point of the outer square is covered exactly once and nothing spills out."""
    hits: dict[Point, int] = {}
    for c in offsets:
        for p in inner.points():
            q = _add(p, c)
            hits[q] = hits.get(q, 0) + 1
    return set(hits) == outer.point_set() and all(v == 1 for v in hits.values())


def tile_square(outer: SquareTile, inner: SquareTile) -> TilingOffsets:
    if outer.side % inner.side:
        raise GeometryError(f"side {inner.side} does not divide side {outer.side}")
    ratio = outer.side // inner.side
    span = (ratio - 1) // 2
    offs = tuple((inner.side * a, inner.side * b)
                 for b in range(-span, span + 1) for a in range(-span, span + 1))
    if not verify_tiling(inner, outer, offs):
        raise GeometryError("grid offsets fail to tile the outer square")
    return TilingOffsets(inner, outer, offs)


def minkowski_excess(inner: SquareTile, outer: SquareTile) -> Fraction:
    """|(F + F') ∖ F'| / |F'| by enumeration."""
    grown = {_add(p, q) for p in inner.points() for q in outer.points()}
    return Q(len(grown - outer.point_set()), outer.size)


def shift_excess(tile: SquareTile, g: Point) -> Fraction:
    """|F ∖ (g + F)| / |F| by enumeration."""
    pts = tile.point_set()
    moved = {_add(p, g) for p in pts}
    return Q(len(pts - moved), tile.size)


def shift_excess_closed(side: int, g: Point) -> Fraction:
    a, b = abs(g[0]), abs(g[1])
    if a >= side or b >= side:
        return ONE
    return Q(side * side - (side - a) * (side - b), side * side)


# ---------------------------------------------------------------- column-to-tile maps

class ColumnToTileMap:
    """α(t, b) = φ_{σ(A)}(t) for b in atom A of the base partition."""

    def __init__(self, stage: int, tower: Tower, tile: SquareTile,
                 atoms: Sequence[tuple[str, IntervalSet]], phis: dict[str, Sequence[Point]],
                 sigma: dict[str, str]):
        self.stage = stage
        self.tower = tower
        self.tile = tile
        self.atoms = tuple(atoms)
        self.phis = {i: tuple(v) for i, v in phis.items()}
        self.sigma = dict(sigma)
        self.verify()
        self._inv = {i: {p: t for t, p in enumerate(v)} for i, v in self.phis.items()}
        self._atom_fn = StepFunction.from_regions((s, lab) for lab, s in self.atoms)
        self._atom_set = dict(self.atoms)

    def verify(self) -> None:
        if self.tower.height != self.tile.size:
            raise ShapeError(f"tower height {self.tower.height} differs from tile size {self.tile.size}")
        pts = self.tile.point_set()
        for i, phi in self.phis.items():
            if len(phi) != self.tower.height or set(phi) != pts:
                raise ShapeError(f"φ_{i} is not a bijection from heights onto the square")
        union = IntervalSet.union_all(s for _, s in self.atoms)
        if union != self.tower.base or sum((s.measure for _, s in self.atoms), ZERO) != union.measure:
            raise ShapeError("atoms do not partition the tower base")
        labels = [lab for lab, _ in self.atoms]
        if set(self.sigma) != set(labels):
            raise ShapeError("the assignment must cover every atom exactly")
        if set(self.sigma.values()) != set(self.phis):
            raise ShapeError("the assignment atom ↦ index is not onto the index set")
        if len(labels) < len(self.phis):
            raise ShapeError("fewer atoms than indices")

    @property
    def height(self) -> int:
        return self.tower.height

    def alpha(self, t: int, atom: str) -> Point:
        return self.phis[self.sigma[atom]][t]

    def height_of(self, atom: str, p: Point) -> int | None:
        return self._inv[self.sigma[atom]].get(p)

    def atom_of(self, b) -> str:
        return self._atom_fn.value_at(b)

    def atom_set(self, label: str) -> IntervalSet:
        return self._atom_set[label]

    def locate(self, x) -> tuple[int, Fraction, str] | None:
        t = self.tower.height_function().value_at(x, None)
        if t is None:
            return None
        b = self.tower.columns[t].inverse().apply(x)
        return t, b, self.atom_of(b)

    def position(self, x) -> Point | None:
        loc = self.locate(x)
        return None if loc is None else self.alpha(loc[0], loc[2])

    def index_regions(self) -> dict[str, IntervalSet]:
        out: dict[str, list[IntervalSet]] = {}
        for lab, s in self.atoms:
            out.setdefault(self.sigma[lab], []).append(s)
        return {i: IntervalSet.union_all(v) for i, v in out.items()}

    def move_map(self, s: Point) -> PartialTranslation:
        """σ_s at this stage as an exact partial translation: S^t b ↦ S^{t'} b."""
        parts = []
        cols = self.tower.columns
        for idx, base in self.index_regions().items():
            phi, inv = self.phis[idx], self._inv[idx]
            for t, p in enumerate(phi):
                t2 = inv.get(_add(p, s))
                if t2 is None:
                    continue
                piece = cols[t].restrict(base)
                parts.append(cols[t2].restrict(base).compose(piece.inverse()))
        return PartialTranslation.combine_all(parts, name=f"move{s}@{self.stage}")

    def lam_step(self, k: int) -> StepFunction:
        """x ↦ α(t+k, b) − α(t, b) on tower points with t + k inside the window."""
        regions = []
        for idx, base in self.index_regions().items():
            phi = self.phis[idx]
            for t in range(max(0, -k), min(self.height, self.height - k)):
                regions.append((self.tower.transport(base, t), _sub(phi[t + k], phi[t])))
        return StepFunction.from_regions(regions)

    def kappa_step(self, g: Point) -> StepFunction:
        """x ↦ t' − t where α(t', b) = α(t, b) + g, where such t' exists."""
        regions = []
        for idx, base in self.index_regions().items():
            phi, inv = self.phis[idx], self._inv[idx]
            for t, p in enumerate(phi):
                t2 = inv.get(_add(p, g))
                if t2 is not None:
                    regions.append((self.tower.transport(base, t), t2 - t))
        return StepFunction.from_regions(regions)

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "side": self.tile.side,
            "height": self.height,
            "tower": self.tower.to_json(),
            "atoms": [{"label": lab, "set": s.to_json(), "index": self.sigma[lab]} for lab, s in self.atoms],
            "phi": {i: [list(p) for p in v] for i, v in sorted(self.phis.items())},
        }


@dataclass
class Occurrence:
    height: int
    previous_atom: str
    offset: Point


@dataclass
class NestingReport:
    stage: int
    words: dict[str, tuple[int, ...]]
    occurrences: dict[str, list[Occurrence]]
    checked_identities: int

    def offset_at(self, atom: str, height: int) -> Occurrence | None:
        for occ in self.occurrences[atom]:
            if occ.height == height:
                return occ
        return None

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "checked_identities": self.checked_identities,
            "atoms": {a: {"indicator_word": "".join(map(str, w)),
                          "occurrences": [{"height": o.height, "previous_atom": o.previous_atom,
                                           "offset": list(o.offset)} for o in self.occurrences[a]]}
                      for a, w in sorted(self.words.items())},
        }


def _base_indicator_word(cur: ColumnToTileMap, prev: ColumnToTileMap, label: str, A: IntervalSet) -> list[int]:
    word = []
    for m in range(cur.height):
        img = cur.tower.transport(A, m)
        if img.issubset(prev.tower.base):
            word.append(1)
        elif (img & prev.tower.base).measure == 0:
            word.append(0)
        else:
            raise NestingError(label, m, "the atom is split by the previous base at this height")
    return word


def check_nesting(cur: ColumnToTileMap, prev: ColumnToTileMap, offsets: TilingOffsets) -> NestingReport:
    """Verify atom-constancy of the base-indicator word and α'(i+j, b) = α(j, S^i b) + c
    at every occurrence i, with distinct c drawn from the tiling offsets."""
    allowed = set(offsets.offsets)
    words: dict[str, tuple[int, ...]] = {}
    occs: dict[str, list[Occurrence]] = {}
    checked = 0
    for label, A in cur.atoms:
        word = _base_indicator_word(cur, prev, label, A)
        words[label] = tuple(word)
        found: list[Occurrence] = []
        for i, bit in enumerate(word):
            if not bit or i + prev.height > cur.height:
                continue
            img = cur.tower.transport(A, i)
            owner = next((lab for lab, s in prev.atoms if img.issubset(s)), None)
            if owner is None:
                raise NestingError(label, i, "the occurrence straddles several previous atoms")
            c = _sub(cur.alpha(i, label), prev.alpha(0, owner))
            for j in range(prev.height):
                if cur.alpha(i + j, label) != _add(prev.alpha(j, owner), c):
                    raise NestingError(label, i, f"identity fails at j={j}")
                checked += 1
            if c not in allowed:
                raise NestingError(label, i, f"offset {c} is not a tiling offset")
            if any(o.offset == c for o in found):
                raise NestingError(label, i, f"offset {c} is reused")
            found.append(Occurrence(i, owner, c))
        occs[label] = found
    return NestingReport(cur.stage, words, occs, checked)


def _split_by_digit(base: IntervalSet, parts: int) -> list[IntervalSet]:
    out = [[] for _ in range(parts)]
    for lo, hi in base:
        w = (hi - lo) / parts
        for d in range(parts):
            out[d].append((lo + d * w, lo + (d + 1) * w))
    return [IntervalSet(v) for v in out]


def refined_atoms(tower: Tower, p: LabeledPartition, parts: int) -> list[tuple[str, IntervalSet]]:
    """Pure atoms of the tower base cut by the next base digit, so the result refines the pure partition."""
    pure = pure_atoms(tower, p)
    digits = _split_by_digit(tower.base, parts)
    out = []
    for k, a in enumerate(pure):
        for d, piece in enumerate(digits):
            s = a.set & piece
            if s.measure:
                out.append((f"{k}.{d}" if len(pure) > 1 else str(d), s))
    return out


def build_column_to_tile(stage: int, tower: Tower, atoms: Sequence[tuple[str, IntervalSet]], tile: SquareTile,
                         orders: Sequence[str], previous: ColumnToTileMap | None = None,
                         ) -> tuple[ColumnToTileMap, NestingReport | None, TilingOffsets | None]:
    """Atom number a gets index orders[a mod |orders|]. At the first stage the index names the order
    of the square's cells; later it names the order in which occurrences visit the tiling offsets."""
    if tower.height != tile.size:
        raise ShapeError(f"tower height {tower.height} differs from tile size {tile.size}")
    if len(atoms) < len(orders):
        raise ShapeError(f"{len(atoms)} atoms cannot cover {len(orders)} indices")
    sigma = {lab: orders[a % len(orders)] for a, (lab, _) in enumerate(atoms)}
    if previous is None:
        phis = {name: cell_order(name, tile.side) for name in set(orders)}
        return ColumnToTileMap(stage, tower, tile, atoms, phis, sigma), None, None

    offsets = tile_square(tile, previous.tile)
    ratio = tile.side // previous.tile.side
    phis: dict[str, list[Point]] = {}
    for lab, A in atoms:
        name = sigma[lab]
        grid = [(previous.tile.side * a, previous.tile.side * b) for a, b in cell_order(name, ratio)]
        table: list[Point | None] = [None] * tower.height
        starts = [i for i, bit in enumerate(_probe_word(tower, previous, A)) if bit and i + previous.height <= tower.height]
        if len(starts) != len(grid):
            raise NestingError(lab, None, f"{len(starts)} occurrences for {len(grid)} tiling offsets")
        for q, i in enumerate(starts):
            img = tower.transport(A, i)
            owner = next((l2 for l2, s in previous.atoms if img.issubset(s)), None)
            if owner is None:
                raise NestingError(lab, i, "the occurrence straddles several previous atoms")
            for j in range(previous.height):
                if table[i + j] is not None:
                    raise NestingError(lab, i, "occurrence windows overlap")
                table[i + j] = _add(previous.alpha(j, owner), grid[q])
        if any(p is None for p in table):
            raise NestingError(lab, None, "occurrence windows leave heights uncovered")
        if name in phis and phis[name] != table:
            raise NestingError(lab, None, f"atoms sharing index {name} need different tables")
        phis[name] = table
    cur = ColumnToTileMap(stage, tower, tile, atoms, phis, sigma)
    return cur, check_nesting(cur, previous, offsets), offsets


def _probe_word(tower: Tower, prev: ColumnToTileMap, A: IntervalSet) -> list[int]:
    return [1 if tower.transport(A, m).issubset(prev.tower.base) else 0 for m in range(tower.height)]


# ---------------------------------------------------------------- moves and cocycles

@dataclass
class StagedValue:
    value: object
    stage: int
    per_stage: list

    def to_json(self) -> dict:
        def enc(v):
            if v is None:
                return None
            if isinstance(v, tuple):
                return list(v)
            return frac_str(v) if not isinstance(v, int) else v
        return {"value": enc(self.value), "stabilized_at": self.stage, "per_stage": [enc(v) for v in self.per_stage]}


def _stabilize(values: list, what: str) -> StagedValue:
    if not values or values[-1] is None:
        raise UnstabilizedError(f"{what} is undefined at the last built stage")
    last = values[-1]
    n = len(values)
    while n > 1 and values[n - 2] == last:
        n -= 1
    return StagedValue(last, n, values)


def generator_move(maps: Sequence[ColumnToTileMap], s: Point, x) -> StagedValue:
    """The point S^{t'} b with α(t', b) = s + α(t, b), stage by stage, and where it settles."""
    x = frac(x)
    vals = []
    for m in maps:
        loc = m.locate(x)
        if loc is None:
            vals.append(None)
            continue
        t, b, atom = loc
        t2 = m.height_of(atom, _add(m.alpha(t, atom), s))
        vals.append(None if t2 is None else m.tower.columns[t2].apply(b))
    return _stabilize(vals, f"move {s} at {x}")


def lam(maps: Sequence[ColumnToTileMap], x, k: int) -> StagedValue:
    x = frac(x)
    vals = []
    for m in maps:
        loc = m.locate(x)
        if loc is None or not 0 <= loc[0] + k < m.height:
            vals.append(None)
        else:
            t, _, atom = loc
            vals.append(_sub(m.alpha(t + k, atom), m.alpha(t, atom)))
    return _stabilize(vals, f"λ(·,{k}) at {x}")


def kappa(maps: Sequence[ColumnToTileMap], x, g: Point) -> StagedValue:
    x = frac(x)
    vals = []
    for m in maps:
        loc = m.locate(x)
        if loc is None:
            vals.append(None)
            continue
        t, _, atom = loc
        t2 = m.height_of(atom, _add(m.alpha(t, atom), g))
        vals.append(None if t2 is None else t2 - t)
    return _stabilize(vals, f"κ(·,{g}) at {x}")


def nesting_offset(maps: Sequence[ColumnToTileMap], reports: Sequence[NestingReport], x, i: int, k: int,
                   ) -> tuple[Point, bool]:
    """Compose per-stage occurrence offsets from stage i (1-based) up to k and compare
    α_k(x) with α_i(x) + c. Returns (c, identity holds)."""
    x = frac(x)
    c = (0, 0)
    for j in range(i, k):
        lo, hi = maps[j - 1], maps[j]
        loc_hi = hi.locate(x)
        loc_lo = lo.locate(x)
        if loc_hi is None or loc_lo is None:
            raise UnstabilizedError(f"{x} is outside a tower between stages {i} and {k}")
        t_hi, _, atom_hi = loc_hi
        occ_height = t_hi - loc_lo[0]
        occ = reports[j - 1].offset_at(atom_hi, occ_height)
        if occ is None:
            raise UnstabilizedError(f"{x} is not inside a full occurrence at stage {j + 1}")
        c = _add(c, occ.offset)
    return c, maps[k - 1].position(x) == _add(maps[i - 1].position(x), c)


def orbit_window_check(maps: Sequence[ColumnToTileMap], x, window: int) -> bool:
    """Inside the last stage: k ↦ λ(x, k) is injective on |k| ≤ window, κ inverts it, and walking
    unit generator moves along a lattice path from α(x) reaches S^k x."""
    m = maps[-1]
    x = frac(x)
    loc = m.locate(x)
    if loc is None:
        return False
    t, b, atom = loc
    seen = set()
    for k in range(-window, window + 1):
        if not 0 <= t + k < m.height:
            return False
        v = _sub(m.alpha(t + k, atom), m.alpha(t, atom))
        if v in seen:
            return False
        seen.add(v)
        if m.height_of(atom, _add(m.alpha(t, atom), v)) - t != k:
            return False
        # walk x-steps then y-steps with stage-level moves
        y = x
        pos = m.alpha(t, atom)
        for axis in (0, 1):
            step = 1 if v[axis] >= 0 else -1
            unit = (step, 0) if axis == 0 else (0, step)
            for _ in range(abs(v[axis])):
                lt, lb, la = m.locate(y)
                t2 = m.height_of(la, _add(m.alpha(lt, la), unit))
                if t2 is None:
                    return False
                y = m.tower.columns[t2].apply(lb)
                pos = _add(pos, unit)
        if y != m.tower.columns[t + k].apply(b):
            return False
    return True


# ---------------------------------------------------------------- fixed-stage sets

@dataclass
class ZFixedStage:
    kind: str  # "D" for λ(·, k), "E" for κ(·, g)
    key: object
    horizon: int
    sets: dict[int, IntervalSet]
    values: StepFunction

    def measures(self) -> dict[int, Fraction]:
        return {n: s.measure for n, s in self.sets.items()}

    def settled(self) -> IntervalSet:
        return IntervalSet.union_all(self.sets.values())

    def to_json(self) -> dict:
        key = list(self.key) if isinstance(self.key, tuple) else self.key
        return {"kind": self.kind, "key": key, "horizon": self.horizon,
                "stability_note": f"stable values certified only through stage {self.horizon}",
                "measures": {str(n): frac_str(s.measure) for n, s in sorted(self.sets.items())}}


def _fixed_stage(steps: Sequence[StepFunction], kind: str, key) -> ZFixedStage:
    top = len(steps)
    stable = {top: steps[-1].carrier}
    for n in range(top - 1, 0, -1):
        eq = overlay(steps[n - 1], steps[n], lambda a, b: a == b).level_set(True)
        stable[n] = stable[n + 1] & eq
    sets = {1: stable[1]}
    for n in range(2, top + 1):
        sets[n] = stable[n] - stable[n - 1]
    return ZFixedStage(kind, key, top, sets, steps[-1])


def lam_fixed_stage(maps: Sequence[ColumnToTileMap], k: int) -> ZFixedStage:
    return _fixed_stage([m.lam_step(k) for m in maps], "D", k)


def kappa_fixed_stage(maps: Sequence[ColumnToTileMap], g: Point) -> ZFixedStage:
    return _fixed_stage([m.kappa_step(g) for m in maps], "E", g)


# ---------------------------------------------------------------- bound checks

@dataclass(frozen=True)
class ZSchedule:
    """ε_i = eps_scale·eps_ratio^i and |T_i| = side_i² with side_i = side1·side_ratio^(i-1)."""

    eps_scale: Fraction = Fraction(1)
    eps_ratio: Fraction = Fraction(1, 2)
    side1: int = 3
    side_ratio: int = 3

    def eps(self, i: int) -> Fraction:
        return self.eps_scale * self.eps_ratio ** i

    def eps_tail(self, m: int) -> Fraction:
        return self.eps(m) / (1 - self.eps_ratio)

    def side(self, i: int) -> int:
        return self.side1 * self.side_ratio ** (i - 1)

    def height(self, i: int) -> int:
        return self.side(i) ** 2

    def inv_height_tail(self, m: int) -> Fraction:
        """Σ_{i≥m} 1/|T_i|."""
        r = Fraction(1, self.side_ratio ** 2)
        return Fraction(1, self.height(m)) / (1 - r)

    def shift_tail(self, m: int, g: Point) -> Fraction:
        """Σ_{i≥m} |F_i ∖ (g+F_i)|/|F_i|: finitely many saturated terms, then two geometric series."""
        a, b = abs(g[0]), abs(g[1])
        total = Fraction(0)
        i = m
        while self.side(i) <= max(a, b):
            total += 1
            i += 1
        s0, r = self.side(i), self.side_ratio
        lin = Fraction(a + b, s0) / (1 - Fraction(1, r))
        quad = Fraction(a * b, s0 * s0) / (1 - Fraction(1, r * r))
        return total + lin - quad


def lam_rhs(n: int, k: int, sched: ZSchedule) -> Fraction:
    """ε_{n-1} + 3Σ_{i≥n} ε_i + |k| Σ_{i≥n} 1/|T_{i-1}|."""
    return sched.eps(n - 1) + 3 * sched.eps_tail(n) + abs(k) * sched.inv_height_tail(n - 1)


def kappa_rhs(n: int, g: Point, sched: ZSchedule) -> Fraction:
    """ε_{n-1} + 3Σ_{i≥n} ε_i + Σ_{i≥n} |F_{i-1} ∖ (g+F_{i-1})|/|F_{i-1}|."""
    return sched.eps(n - 1) + 3 * sched.eps_tail(n) + sched.shift_tail(n - 1, g)


def z2_bound_check(d_reports: Sequence[ZFixedStage], e_reports: Sequence[ZFixedStage], sched: ZSchedule,
                   stages: Iterable[int]) -> list[BoundVerdict]:
    out = []
    for n in stages:
        if n < 2:
            continue
        for rep in d_reports:
            if n in rep.sets:
                mu, rhs = rep.sets[n].measure, lam_rhs(n, rep.key, sched)
                out.append(BoundVerdict("fixed-stage λ", n, rep.key, mu, rhs, rhs, _verdict(mu, rhs, rhs)))
        for rep in e_reports:
            if n in rep.sets:
                mu, rhs = rep.sets[n].measure, kappa_rhs(n, rep.key, sched)
                out.append(BoundVerdict("fixed-stage κ", n, list(rep.key), mu, rhs, rhs, _verdict(mu, rhs, rhs)))
    return out


@dataclass
class ExceptionalSet:
    stage: int
    generator: Point
    outside_tower: Fraction
    outside_previous: Fraction
    leaves_square: Fraction
    edge_levels: Fraction
    total: Fraction
    budget: Fraction
    component_budgets: tuple[Fraction, Fraction, Fraction, Fraction]

    @property
    def ok(self) -> bool:
        return self.total < self.budget

    def to_json(self) -> dict:
        names = ("outside_tower", "outside_previous", "leaves_square", "edge_levels")
        vals = (self.outside_tower, self.outside_previous, self.leaves_square, self.edge_levels)
        return {
            "stage": self.stage, "generator": list(self.generator),
            "components": {k: {"measure": frac_str(v), "claimed_below": frac_str(c), "within": v < c}
                           for k, v, c in zip(names, vals, self.component_budgets)},
            "total": frac_str(self.total), "budget": frac_str(self.budget), "ok": self.ok,
        }


def exceptional_set(maps: Sequence[ColumnToTileMap], k: int, s: Point, sched: ZSchedule) -> ExceptionalSet:
    """The union of the four sets whose avoidance puts a point in the interior at stage k (k ≥ 2)."""
    cur, prev = maps[k - 1], maps[k - 2]
    c1 = cur.tower.union.complement()
    c2 = prev.tower.union.complement()
    c3 = cur.move_map(s).domain().complement() & cur.tower.union
    band = prev.height - 1
    edge = [cur.tower.level(t) for t in range(min(band, cur.height))]
    edge += [cur.tower.level(t) for t in range(max(cur.height - band, 0), cur.height)]
    c4 = IntervalSet.union_all(edge)
    total = IntervalSet.union_all([c1, c2, c3, c4]).measure
    e_k, e_prev = sched.eps(k), sched.eps(k - 1)
    return ExceptionalSet(k, s, c1.measure, c2.measure, c3.measure, c4.measure, total,
                          4 * e_k + e_prev, (e_k, e_prev, e_k, 2 * e_k))


def interior_set(maps: Sequence[ColumnToTileMap], n: int, s: Point, moves: Sequence[PartialTranslation]) -> IntervalSet:
    """Points meeting the interior conditions at every stage j = n..N: inside the stage-j tower with the
    move defined, and (for j < N) with the whole stage-j column inside the next tower."""
    N = len(maps)
    acc = IntervalSet.full()
    for j in range(n, N + 1):
        m = maps[j - 1]
        acc = acc & moves[j - 1].domain()
        if j < N:
            nxt = maps[j].tower.union
            ok_base = m.tower.base
            for t in range(m.height):
                ok_base = ok_base & m.tower.columns[t].inverse().apply_set(nxt)
            spread = IntervalSet.union_all(m.tower.transport(ok_base, t) for t in range(m.height))
            acc = acc & spread
    return acc


@dataclass
class StabilizationCheck:
    generator: Point
    stage: int
    interior_measure: Fraction
    agrees: bool

    def to_json(self) -> dict:
        return {"generator": list(self.generator), "stage": self.stage,
                "interior_measure": frac_str(self.interior_measure), "agrees_with_later_stages": self.agrees}


def stabilization_checks(maps: Sequence[ColumnToTileMap]) -> list[StabilizationCheck]:
    """For each generator and stage n: on every interior point the stage-n move equals all later moves."""
    out = []
    for s in GENERATORS:
        moves = [m.move_map(s) for m in maps]
        for n in range(1, len(maps)):
            interior = interior_set(maps, n, s, moves)
            ok = True
            for j in range(n + 1, len(maps) + 1):
                agree = moves[n - 1].agrees_with(moves[j - 1])
                if not interior.issubset(agree):
                    ok = False
            out.append(StabilizationCheck(s, n, interior.measure, ok))
    return out


# ---------------------------------------------------------------- driver

@dataclass
class ZTileConfig:
    radix: int = 3
    stages: int = 3
    orders: list[str] = field(default_factory=lambda: ["boustrophedon"])
    partition_atoms: int = 3
    eps_scale: Fraction = Fraction(1)
    eps_ratio: Fraction = Fraction(1, 2)
    ks: list[int] = field(default_factory=lambda: [1, 2])
    gs: list[Point] = field(default_factory=lambda: [(1, 0), (0, 1)])
    samples: int = 100
    window: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.radix < 3 or self.radix % 2 == 0:
            raise ConfigError("ztile radix must be an odd integer ≥ 3")
        if self.stages < 1:
            raise ConfigError("need at least one stage")
        for name in self.orders:
            cell_order(name, 1)
        sched = self.schedule()
        for n in range(1, self.stages + 2):
            if not sched.eps(n) <= Fraction(1, 2 ** n):
                raise ConfigError(f"schedule invariant eps_n <= 2^-n fails at n={n}")

    def schedule(self) -> ZSchedule:
        return ZSchedule(frac(self.eps_scale), frac(self.eps_ratio), self.radix, self.radix)


@dataclass
class ZTileResult:
    config: ZTileConfig
    maps: list[ColumnToTileMap]
    tilings: list[dict]
    nesting: list[NestingReport]
    side_conditions: list[dict]
    exceptional: list[ExceptionalSet]
    stabilization: list[StabilizationCheck]
    d_reports: list[ZFixedStage]
    e_reports: list[ZFixedStage]
    bounds: list[BoundVerdict]
    entropy: list[tuple[str, EntropyLedger, EntropyCheck]]
    samples: list[dict]

    @property
    def failures(self) -> list[str]:
        out = []
        out += [f"tiling {t['inner_side']}→{t['outer_side']} not exact" for t in self.tilings if not t["exact"]]
        out += [f"exceptional set budget at stage {e.stage} for {e.generator}" for e in self.exceptional if not e.ok]
        out += [f"move {c.generator} not stable from stage {c.stage}" for c in self.stabilization if not c.agrees]
        out += [f"{b.bound} bound at n={b.n}, key={b.k}" for b in self.bounds if b.verdict == "fail"]
        out += [f"entropy {name}: {r.verdict}" for name, _, r in self.entropy if r.verdict == "refinement-failure"]
        out += [f"sample {s['point']} failed {s['failed']}" for s in self.samples if s["failed"]]
        return out

    def to_json(self) -> dict:
        return {
            "pipeline": "ztile",
            "stages": len(self.maps),
            "failures": self.failures,
            "maps": [m.to_json() for m in self.maps],
            "tilings": self.tilings,
            "nesting": [r.to_json() for r in self.nesting],
            "side_conditions": self.side_conditions,
            "exceptional_sets": [e.to_json() for e in self.exceptional],
            "stabilization": [c.to_json() for c in self.stabilization],
            "fixed_stage": [r.to_json() for r in self.d_reports + self.e_reports],
            "bounds": [b.to_json() for b in self.bounds],
            "entropy": [{"cocycle": name, **r.to_json()} for name, _, r in self.entropy],
            "samples": self.samples,
        }


def build_maps(cfg: ZTileConfig) -> tuple[list[ColumnToTileMap], list[NestingReport], list[TilingOffsets]]:
    cfg.validate()
    system = odometer_system(2 * cfg.stages, cfg.radix)
    p = LabeledPartition.equipartition(cfg.partition_atoms)
    maps: list[ColumnToTileMap] = []
    reports: list[NestingReport] = []
    tilings: list[TilingOffsets] = []
    for n in range(1, cfg.stages + 1):
        side = cfg.radix ** n
        height = side * side
        tower = tower_from_levels(system.map, system.canonical_base(height), height)
        atoms = refined_atoms(tower, p, cfg.radix)
        prev = maps[-1] if maps else None
        cur, rep, offs = build_column_to_tile(n, tower, atoms, SquareTile(side), cfg.orders, prev)
        maps.append(cur)
        if rep is not None:
            reports.append(rep)
            tilings.append(offs)
    return maps, reports, tilings


def run_ztile(cfg: ZTileConfig) -> ZTileResult:
    maps, nesting, tilings = build_maps(cfg)
    sched = cfg.schedule()
    N = len(maps)

    tiling_rows = []
    for n in range(1, N):
        inner, outer = maps[n - 1].tile, maps[n].tile
        offs = tile_square(outer, inner)
        tiling_rows.append({**offs.to_json(), "exact": verify_tiling(inner, outer, offs.offsets)})

    side_rows = []
    for n in range(1, N + 1):
        row = {"stage": n, "height": maps[n - 1].height, "side": maps[n - 1].tile.side,
               "achieved_epsilon": frac_str(maps[n - 1].tower.achieved_epsilon),
               "scheduled_epsilon": frac_str(sched.eps(n))}
        if n < N:
            excess = minkowski_excess(maps[n - 1].tile, maps[n].tile)
            ratio = Q(maps[n - 1].height, maps[n].height)
            row.update({
                "boundary_excess": frac_str(excess),
                "boundary_required_below": frac_str(sched.eps(n + 1)),
                "boundary_holds": excess < sched.eps(n + 1),
                "height_ratio": frac_str(ratio),
                "height_ratio_holds": ratio < sched.eps(n + 1),
            })
        side_rows.append(row)

    exceptional = [exceptional_set(maps, k, s, sched) for k in range(2, N + 1) for s in GENERATORS]
    stab = stabilization_checks(maps)
    d_reps = [lam_fixed_stage(maps, k) for k in cfg.ks]
    e_reps = [kappa_fixed_stage(maps, tuple(g)) for g in cfg.gs]
    bounds = z2_bound_check(d_reps, e_reps, sched, range(2, N + 1))

    entropy = []
    for rep in d_reps:
        led = EntropyLedger()
        for n, s in sorted(rep.sets.items()):
            if s.measure:
                led.add(n, s.measure, 4 * maps[n - 1].tile.size)
        masses = [s.measure for s in rep.values.restrict(rep.settled()).level_sets().values()]
        res = entropy_check(led, masses, TailSchedule(c=Fraction(1), a=Fraction(1, 2), b=2, mult=4, start=N))
        entropy.append((f"lambda k={rep.key}", led, res))
    for rep in e_reps:
        led = EntropyLedger()
        for n, s in sorted(rep.sets.items()):
            if s.measure:
                led.add(n, s.measure, 2 * maps[n - 1].height)
        masses = [s.measure for s in rep.values.restrict(rep.settled()).level_sets().values()]
        res = entropy_check(led, masses, TailSchedule(c=Fraction(1), a=Fraction(1, 8), b=2, mult=2, start=N))
        entropy.append((f"kappa g={list(rep.key)}", led, res))

    samples = []
    rng = random.Random(cfg.seed)
    top = maps[-1]
    lo, hi = top.tower.base.intervals[0]
    for _ in range(cfg.samples):
        b = lo + (hi - lo) * Q(2 * rng.randrange(512) + 1, 1024)
        t = rng.randrange(cfg.window, top.height - cfg.window)
        x = top.tower.columns[t].apply(b)
        failed = []
        if not orbit_window_check(maps, x, cfg.window):
            failed.append("orbit-window")
        for s in GENERATORS:
            try:
                mv = generator_move(maps, s, x)
            except UnstabilizedError:
                continue
            back = generator_move(maps, (-s[0], -s[1]), mv.value)
            if back.value != x:
                failed.append(f"inverse-move{s}")
        if N >= 2:
            try:
                c, ok = nesting_offset(maps, nesting, x, 1, N)
                if not ok:
                    failed.append("nesting-composition")
            except UnstabilizedError:
                pass
        samples.append({"point": frac_str(x), "failed": failed})

    return ZTileResult(cfg, maps, tiling_rows, nesting, side_rows, exceptional, stab, d_reps, e_reps,
                       bounds, entropy, samples)
