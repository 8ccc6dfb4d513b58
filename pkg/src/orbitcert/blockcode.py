"""Blocked permutations, blocked cocycles over a tower, and the composed cocycles they generate.

Conventions: block positions inside a window are 1-based (w ∈ 1..L) as in the
permutation tables; tower heights are 0-based. A block at height qL covers
heights qL..qL+L-1, and height qL+w-1 carries position w.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Iterable, Mapping, Sequence

from .dynamics import ConfigError, PartialTranslation, PiecewiseTranslation, flatten_powers
from .ratset import (
    ZERO,
    IntervalSet,
    StepFunction,
    frac,
    frac_str,
    overlay,
)
from .towers import Tower


class GeometryError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class EpsilonViolationError(ValueError):
    def __init__(self, excess: Fraction):
        self.excess = excess
        super().__init__(f"off-block measure exceeds the declared epsilon by {excess}")


@dataclass(frozen=True)
class JKLPermutation:
    J: int
    K: int
    L: int
    u: int
    v: int
    table: tuple[int, ...]

    def __call__(self, w: int) -> int:
        return self.table[w - 1]

    @cached_property
    def inverse_table(self) -> tuple[int, ...]:
        inv = [0] * self.L
        for w, r in enumerate(self.table, start=1):
            inv[r - 1] = w
        return tuple(inv)

    def inv(self, r: int) -> int:
        return self.inverse_table[r - 1]

    @property
    def tv(self) -> int:
        return self.v

    @property
    def rigid_block(self) -> range:
        return range(self.u + 1, self.u + self.J + 1)

    def is_identity(self) -> bool:
        return self.table == tuple(range(1, self.L + 1))

    def to_json(self) -> dict:
        return {"J": self.J, "K": self.K, "L": self.L, "u": self.u, "v": self.v, "table": list(self.table)}


def make_jkl_permutation(J: int, K: int, L: int, u: int, v: int,
                         filler: str | Mapping[int, int] = "cyclic") -> JKLPermutation:
    """Translate C_J+u by v and fill the rest either in cyclic order or by an explicit table."""
    if J < 0 or K < 0 or L < 1:
        raise PreconditionError("need J ≥ 0, K ≥ 0 and L ≥ 1")
    if abs(v) > K:
        raise PreconditionError(f"translation {v} exceeds K = {K}")
    if u < 0 or u + J > L:
        raise GeometryError(f"rigid block C_{J}+{u} is not inside C_{L}")
    if u + v < 0 or u + J + v > L:
        raise GeometryError(f"rigid block C_{J}+{u} translated by {v} leaves C_{L}")
    table = [0] * L
    for w in range(u + 1, u + J + 1):
        table[w - 1] = w + v
    rigid = set(range(u + 1, u + J + 1))
    target = set(range(u + v + 1, u + J + v + 1))
    if filler == "cyclic":
        def ring(start: int, skip: set[int]) -> list[int]:
            return [((start + i - 1) % L) + 1 for i in range(L) if ((start + i - 1) % L) + 1 not in skip]
        dom = ring(u + J + 1, rigid)
        img = ring(u + J + v + 1, target)
        for a, b in zip(dom, img):
            table[a - 1] = b
    elif isinstance(filler, Mapping):
        dom_expected = set(range(1, L + 1)) - rigid
        img_expected = set(range(1, L + 1)) - target
        if set(filler.keys()) != dom_expected or sorted(filler.values()) != sorted(img_expected):
            raise GeometryError("explicit filler is not a bijection between the filler sets")
        for a, b in filler.items():
            table[a - 1] = b
    else:
        raise ValueError(f"unknown filler rule {filler!r}")
    if sorted(table) != list(range(1, L + 1)):
        raise GeometryError("assembled map is not a bijection of C_L")
    return JKLPermutation(J, K, L, u, v, tuple(table))


@lru_cache(maxsize=None)
def rotation(L: int, K: int, k: int) -> JKLPermutation:
    """The (L-K, K, L) permutation translating {1..L-K} by k with cyclic filler."""
    return make_jkl_permutation(L - K, K, L, 0, k)


class BlockedCocycle:
    """One construction stage: a tower of the previous action cut into blocks of length L,
    with a tuple of blocked permutations attached to each cell of the base."""

    def __init__(self, stage: int, tower: Tower, K: int, L: int, epsilon: Fraction,
                 cells: Sequence[tuple[IntervalSet, Sequence[JKLPermutation]]]):
        M = tower.height
        if L < 1 or M % L:
            raise ConfigError(f"block length {L} does not divide tower height {M}")
        self.stage = stage
        self.tower = tower
        self.K = K
        self.L = L
        self.epsilon = frac(epsilon)
        self.cells = tuple((s, tuple(perms)) for s, perms in cells)
        Q = M // L
        total = ZERO
        for s, perms in self.cells:
            if len(perms) != Q:
                raise ConfigError(f"cell carries {len(perms)} permutations for {Q} blocks")
            for p in perms:
                if p.L != L or p.K != K or p.J != L - K:
                    raise PreconditionError("permutation does not have the declared (L-K, K, L) shape")
            total += s.measure
        union = IntervalSet.union_all(s for s, _ in self.cells)
        if union != tower.base or total != union.measure:
            raise ConfigError("assignment cells must partition the tower base")
        off = self.off_block_measure
        if off > self.epsilon:
            raise EpsilonViolationError(off - self.epsilon)
        self._cache: dict = {}

    @property
    def map(self) -> PiecewiseTranslation:
        return self.tower.map

    @property
    def height(self) -> int:
        return self.tower.height

    @property
    def block_count(self) -> int:
        return self.tower.height // self.L

    @property
    def off_block_measure(self) -> Fraction:
        return self.tower.achieved_epsilon

    def class_sets(self, q: int) -> dict[JKLPermutation, IntervalSet]:
        key = ("class", q)
        if key not in self._cache:
            buckets: dict[JKLPermutation, list[IntervalSet]] = {}
            for s, perms in self.cells:
                buckets.setdefault(perms[q], []).append(s)
            self._cache[key] = {p: IntervalSet.union_all(v) for p, v in buckets.items()}
        return self._cache[key]

    def first_position(self) -> StepFunction:
        """On the base: the 0-based height, inside block 0, of the point placed first."""
        if "p0" not in self._cache:
            self._cache["p0"] = StepFunction.from_regions(
                (s, p.inv(1) - 1) for p, s in self.class_sets(0).items())
        return self._cache["p0"]

    def _grouped_levels(self, t: int, groups: dict[int, list[IntervalSet]]) -> list[tuple[IntervalSet, int]]:
        out = []
        for val, sets in groups.items():
            out.append((self.tower.transport(IntervalSet.union_all(sets), t), val))
        return out

    def displacement(self) -> StepFunction:
        """δ(y) = π(w) - w at tower points, 0 off the tower."""
        if "delta" in self._cache:
            return self._cache["delta"]
        regions: list[tuple[IntervalSet, int]] = []
        for t in range(self.height):
            q, p = divmod(t, self.L)
            w = p + 1
            groups: dict[int, list[IntervalSet]] = {}
            for perm, s in self.class_sets(q).items():
                groups.setdefault(perm(w) - w, []).append(s)
            regions.extend(self._grouped_levels(t, groups))
        regions.append((self.tower.union.complement(), 0))
        self._cache["delta"] = StepFunction.from_regions(regions)
        return self._cache["delta"]

    def jump(self) -> StepFunction:
        """Number of steps of the carrier map that realizes one step of the new action."""
        if "jump" in self._cache:
            return self._cache["jump"]
        M, L, Q = self.height, self.L, self.block_count
        base = self.tower.base
        p0 = self.first_position()
        landed = self.tower.exit_map().pull(p0)
        exit_offset = landed.union(StepFunction.constant(base - landed.carrier, 0))
        regions: list[tuple[IntervalSet, int]] = []
        for t in range(M):
            q, p = divmod(t, L)
            w = p + 1
            groups: dict[int, list[IntervalSet]] = {}
            for perm, s in self.class_sets(q).items():
                r = perm(w)
                if r < L:
                    groups.setdefault(perm.inv(r + 1) - w, []).append(s)
                elif q < Q - 1:
                    for perm2, s2 in self.class_sets(q + 1).items():
                        part = s & s2
                        if part:
                            groups.setdefault(L - w + perm2.inv(1), []).append(part)
                else:
                    for e, part in exit_offset.restrict(s).level_sets().items():
                        groups.setdefault(M - t + e, []).append(part)
            regions.extend(self._grouped_levels(t, groups))
        off = self.tower.union.complement()
        into_base = self.map.pull(p0).restrict(off)
        regions.extend((s, 1 + e) for e, s in into_base.level_sets().items())
        regions.append((off - into_base.carrier, 1))
        self._cache["jump"] = StepFunction.from_regions(regions)
        return self._cache["jump"]

    def forward_generator(self) -> StepFunction:
        """β(x, 1) = 1 + δ(Rx) - δ(x)."""
        d = self.displacement()
        return overlay(self.map.pull(d), d, lambda a, b: 1 + a - b)

    def evaluate(self, x, j: int) -> int:
        """β(x, j): position of R^j x relative to x after the block permutations."""
        d = self.displacement()
        x = frac(x)
        return j + d.value_at(self.map.power(j).apply(x)) - d.value_at(x)

    def evaluate_inverse(self, x, m: int) -> int:
        """The unique j with β(x, j) = m."""
        d = self.displacement()
        x = frac(x)
        dx = d.value_at(x)
        for j in range(m - 2 * self.L, m + 2 * self.L + 1):
            if j + d.value_at(self.map.power(j).apply(x)) - dx == m:
                return j
        raise RuntimeError("blocked cocycle is not invertible at this point")

    def permuted_base(self, subset: IntervalSet | None = None) -> IntervalSet:
        """Move each base point of `subset` to the point that the permutation of block 0 puts first."""
        subset = self.tower.base if subset is None else subset & self.tower.base
        parts = [self.tower.transport(subset & s, h) for h, s in self.first_position().level_sets().items()]
        return IntervalSet.union_all(parts)

    def permuted_base_map(self) -> PartialTranslation:
        parts = [self.tower.columns[h].restrict(s) for h, s in self.first_position().level_sets().items()]
        return PartialTranslation.combine_all(parts, name="permuted-base")

    def translation_vectors(self) -> list[tuple[IntervalSet, tuple[int, ...]]]:
        return [(s, tuple(p.v for p in perms)) for s, perms in self.cells]

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "K": self.K,
            "L": self.L,
            "J": self.L - self.K,
            "epsilon": frac_str(self.epsilon),
            "off_block_measure": frac_str(self.off_block_measure),
            "tower": self.tower.to_json(),
            "cells": [{"set": s.to_json(), "translation_vectors": [p.v for p in perms],
                       "rigid_offsets": [p.u for p in perms]}
                      for s, perms in self.cells],
        }


def build_blocked_cocycle(stage: int, tower: Tower, K: int, L: int, epsilon: Fraction,
                          assignment: Sequence[tuple[IntervalSet, Sequence[JKLPermutation]]]) -> BlockedCocycle:
    return BlockedCocycle(stage, tower, K, L, epsilon, assignment)


def add_steps(a: StepFunction, b: StepFunction) -> StepFunction:
    return overlay(a, b, lambda x, y: x + y)


def cocycle_sum(f: PiecewiseTranslation, g: StepFunction, k: int) -> StepFunction:
    """Σ_{i<k} g∘f^i for k > 0, -Σ_{i=1}^{-k} g∘f^{-i} for k < 0, 0 for k = 0."""
    if k == 0:
        return StepFunction.constant(IntervalSet.full(), 0)
    if k > 0:
        acc = g
        for i in range(1, k):
            acc = add_steps(acc, f.power(i).pull(g))
        return acc
    acc = f.power(-1).pull(g).map(lambda v: -v)
    for i in range(2, -k + 1):
        acc = overlay(acc, f.power(-i).pull(g), lambda x, y: x - y)
    return acc


def _regionwise_sum(R: PiecewiseTranslation, jump: StepFunction, h: StepFunction) -> StepFunction:
    """x ↦ Σ_{i<j(x)} h(R^i x), with the negative-j convention, computed region by region."""
    pieces = []
    inv = R.inverse()
    for j, region in sorted(jump.level_sets().items()):
        cur = PartialTranslation.identity_on(region)
        if j > 0:
            acc = cur.pull(h)
            for _ in range(1, j):
                cur = R.compose(cur)
                acc = add_steps(acc, cur.pull(h))
        elif j < 0:
            cur = inv.compose(cur)
            acc = cur.pull(h).map(lambda v: -v)
            for _ in range(1, -j):
                cur = inv.compose(cur)
                acc = overlay(acc, cur.pull(h), lambda x, y: x - y)
        else:
            acc = StepFunction.constant(region, 0)
        pieces.extend(acc.pieces)
    return StepFunction(pieces)


class StageCocycle:
    """α_n = β_n ∘ ... ∘ β_1 over a base map S, with the derived actions S_n = S^{α_n^{-1}(·,1)}."""

    def __init__(self, base: PiecewiseTranslation):
        self.base = base
        self.factors: list[BlockedCocycle] = []
        self.actions: list[PiecewiseTranslation] = [base]
        one = StepFunction.constant(IntervalSet.full(), 1)
        self.forward: list[StepFunction] = [one]
        self.backward: list[StepFunction] = [one]
        self._steps: dict = {}

    @property
    def depth(self) -> int:
        return len(self.factors)

    def action(self, n: int | None = None) -> PiecewiseTranslation:
        return self.actions[self.depth if n is None else n]

    def push(self, factor: BlockedCocycle, check_route: bool = False) -> PiecewiseTranslation:
        """Append β_{n+1}; it must act on a tower of the current action."""
        R = self.actions[-1]
        if factor.map is not R and factor.map != R:
            raise ConfigError("factor tower is not built on the current derived action")
        delta = factor.displacement()
        g = overlay(add_steps(self.forward[-1], self.base.pull(delta)), delta, lambda a, b: a - b)
        jump = factor.jump()
        h = _regionwise_sum(R, jump, self.backward[-1])
        Sn = flatten_powers(self.base, h, name=f"S_{self.depth + 1}")
        if check_route:
            direct = flatten_powers(R, jump)
            if direct != Sn:
                raise AssertionError("derived action differs between the two composition routes")
        self.factors.append(factor)
        self.forward.append(g)
        self.backward.append(h)
        self.actions.append(Sn)
        return Sn

    def generator(self, n: int | None = None) -> StepFunction:
        return self.forward[self.depth if n is None else n]

    def inverse_generator(self, n: int | None = None) -> StepFunction:
        return self.backward[self.depth if n is None else n]

    def alpha_step(self, n: int, k: int) -> StepFunction:
        key = ("a", n, k)
        if key not in self._steps:
            self._steps[key] = cocycle_sum(self.base, self.forward[n], k)
        return self._steps[key]

    def alpha_inverse_step(self, n: int, k: int) -> StepFunction:
        key = ("ai", n, k)
        if key not in self._steps:
            self._steps[key] = cocycle_sum(self.actions[n], self.backward[n], k)
        return self._steps[key]

    def evaluate(self, x, k: int, n: int | None = None) -> int:
        n = self.depth if n is None else n
        g = self.forward[n]
        x = frac(x)
        if k >= 0:
            y, acc = x, 0
            for _ in range(k):
                acc += g.value_at(y)
                y = self.base.apply(y)
            return acc
        inv = self.base.inverse()
        y, acc = x, 0
        for _ in range(-k):
            y = inv.apply(y)
            acc -= g.value_at(y)
        return acc

    def evaluate_inverse(self, x, k: int, n: int | None = None) -> int:
        n = self.depth if n is None else n
        h = self.backward[n]
        Sn = self.actions[n]
        x = frac(x)
        if k >= 0:
            y, acc = x, 0
            for _ in range(k):
                acc += h.value_at(y)
                y = Sn.apply(y)
            return acc
        inv = Sn.inverse()
        y, acc = x, 0
        for _ in range(-k):
            y = inv.apply(y)
            acc -= h.value_at(y)
        return acc

    def drift_bound(self, n: int | None = None) -> int:
        n = self.depth if n is None else n
        return 2 * sum(f.L for f in self.factors[:n])


def derive_action(base: PiecewiseTranslation, stage: StageCocycle) -> PiecewiseTranslation:
    if stage.base is not base and stage.base != base:
        raise ConfigError("stage cocycle was built over a different base map")
    return flatten_powers(base, stage.inverse_generator(), name=f"S_{stage.depth}")


@dataclass
class FixedStageReport:
    kind: str  # "D" for the forward cocycle, "E" for the inverse one
    k: int
    through: int
    horizon: int
    sets: dict[int, IntervalSet]
    unstable: IntervalSet

    @property
    def certified_through_horizon(self) -> bool:
        return True

    def measures(self) -> dict[int, Fraction]:
        return {n: s.measure for n, s in self.sets.items()}

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "through": self.through,
            "horizon": self.horizon,
            "stability_note": f"stable values certified only through stage {self.horizon}",
            "measures": {str(n): frac_str(s.measure) for n, s in sorted(self.sets.items())},
        }


def fixed_stage_sets(stage: StageCocycle, k: int, through: int, horizon: int = 1,
                     inverse: bool = False) -> FixedStageReport:
    """D_n^k (or E_n^k when inverse) for n ≤ through, stability checked up to through+horizon."""
    top = min(stage.depth, through + horizon)
    if top < 1:
        return FixedStageReport("E" if inverse else "D", k, through, top, {}, IntervalSet.empty())
    value = stage.alpha_inverse_step if inverse else stage.alpha_step
    stable = {top: IntervalSet.full()}
    for n in range(top - 1, 0, -1):
        eq = overlay(value(n, k), value(n + 1, k), lambda a, b: a == b).level_set(True)
        stable[n] = stable[n + 1] & eq
    sets = {1: stable[1]}
    for n in range(2, min(through, top) + 1):
        sets[n] = stable[n] - stable[n - 1]
    claimed = IntervalSet.union_all(sets.values())
    return FixedStageReport("E" if inverse else "D", k, through, top, sets, claimed.complement())


@dataclass(frozen=True)
class GeometricSchedule:
    """ε_i = eps_scale·eps_ratio^i, L_i = L1·L_ratio^(i-1), K_i = K1 + i - 1."""

    eps_scale: Fraction = Fraction(1)
    eps_ratio: Fraction = Fraction(1, 2)
    L1: int = 8
    L_ratio: int = 2
    K1: int = 1

    def eps(self, i: int) -> Fraction:
        return self.eps_scale * self.eps_ratio ** i

    def L(self, i: int) -> int:
        return self.L1 * self.L_ratio ** (i - 1)

    def K(self, i: int) -> int:
        return self.K1 + i - 1

    def eps_tail(self, m: int) -> Fraction:
        """Σ_{i≥m} ε_i."""
        return self.eps(m) / (1 - self.eps_ratio)

    def inv_L_tail(self, m: int) -> Fraction:
        """Σ_{i≥m} 1/L_i."""
        if self.L_ratio <= 1:
            raise ValueError("block lengths must grow geometrically for a closed-form tail")
        m = max(m, 1)
        r = Fraction(1, self.L_ratio)
        return Fraction(1, self.L(m)) / (1 - r)

    def drift(self, n: int) -> int:
        """B_n = 2 Σ_{j≤n} L_j, with B_0 = 0."""
        return 2 * sum(self.L(j) for j in range(1, n + 1))


@dataclass
class BoundVerdict:
    bound: str
    n: int
    k: int
    measure: Fraction
    rhs_lower: Fraction
    rhs_upper: Fraction | None
    verdict: str

    def to_json(self) -> dict:
        return {
            "bound": self.bound, "n": self.n, "k": self.k,
            "measure": frac_str(self.measure),
            "rhs_lower": frac_str(self.rhs_lower),
            "rhs_upper": frac_str(self.rhs_upper) if self.rhs_upper is not None else None,
            "verdict": self.verdict,
        }


def _verdict(measure: Fraction, lower: Fraction, upper: Fraction | None) -> str:
    if measure < lower:
        return "pass"
    if upper is not None and measure >= upper:
        return "fail"
    return "inconclusive"


def fixed_stage_rhs(n: int, k: int, sched: GeometricSchedule) -> Fraction:
    """2Σ_{i≥n-1} ε_i + (|k| + B_{n-2}) Σ_{i≥n-1} 1/L_i, exact."""
    m = n - 1
    return 2 * sched.eps_tail(m) + (abs(k) + sched.drift(max(n - 2, 0))) * sched.inv_L_tail(m)


def inverse_fixed_stage_bounds(n: int, l: int, sched: GeometricSchedule, terms: int = 8,
                               ) -> tuple[Fraction, Fraction | None]:
    """Lower and upper bounds for 2Σ_{i≥n-1} ε_i + |ℓ| Σ_{i≥n-1} 1/(L_i - K_i)."""
    m = max(n - 1, 1)
    eps_part = 2 * sched.eps_tail(n - 1)
    exact_head = ZERO
    for i in range(m, m + terms):
        if sched.L(i) <= sched.K(i):
            return eps_part + abs(l) * sched.inv_L_tail(m), None
        exact_head += Fraction(1, sched.L(i) - sched.K(i))
    tail_lo = sched.inv_L_tail(m + terms)
    lower = eps_part + abs(l) * (exact_head + tail_lo)
    upper = None
    i0 = m + terms
    if 2 * sched.K(i0) <= sched.L(i0) and sched.L_ratio >= 2:
        upper = eps_part + abs(l) * (exact_head + 2 * tail_lo)
    return lower, upper


def fixed_stage_bound_check(d_report: FixedStageReport | None, e_report: FixedStageReport | None,
                            sched: GeometricSchedule, stages: Iterable[int]) -> list[BoundVerdict]:
    out = []
    for n in stages:
        if n < 2:
            continue
        if d_report is not None and n in d_report.sets:
            mu = d_report.sets[n].measure
            rhs = fixed_stage_rhs(n, d_report.k, sched)
            out.append(BoundVerdict("fixed-stage forward", n, d_report.k, mu, rhs, rhs, _verdict(mu, rhs, rhs)))
        if e_report is not None and n in e_report.sets:
            mu = e_report.sets[n].measure
            lo, hi = inverse_fixed_stage_bounds(n, e_report.k, sched)
            out.append(BoundVerdict("fixed-stage inverse", n, e_report.k, mu, lo, hi, _verdict(mu, lo, hi)))
    return out
