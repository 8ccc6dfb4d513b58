"""Exact piecewise translations of [0, 1) and the maps built from them."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .ratset import (
    Q,
    ONE,
    ZERO,
    DomainError,
    PartitionError,
    IntervalSet,
    LabeledPartition,
    StepFunction,
    frac,
    overlay,
)


class ConfigError(ValueError):
    """A construction was requested with parameters it cannot accept."""


class NotABijectionError(ValueError):
    pass


class IncompleteReturnError(RuntimeError):
    """Some positive-measure part of the base did not return within the step cap."""

    def __init__(self, remainder: IntervalSet, max_steps: int):
        self.remainder = remainder
        self.max_steps = max_steps
        super().__init__(f"{remainder.measure} of the base has not returned after {max_steps} steps")


class PartialTranslation:
    """An injective map on a finite union of intervals that translates each piece rigidly."""

    __slots__ = ("_lo", "_hi", "_off", "name", "_inv", "_img_step", "_powers")

    def __init__(self, pieces: Iterable[tuple[Fraction, Fraction, Fraction]] = (), name: str = "",
                 presorted: bool = False):
        step = pieces if isinstance(pieces, StepFunction) else StepFunction(pieces, presorted=presorted)
        self._lo = step._lo
        self._hi = step._hi
        self._off = step._val
        self.name = name
        self._inv = None
        self._img_step = None
        self._powers: dict[int, PartialTranslation] = {}

    @classmethod
    def identity_on(cls, carrier: IntervalSet, name: str = "id") -> PartialTranslation:
        return cls(((lo, hi, ZERO) for lo, hi in carrier), name=name, presorted=True)

    @property
    def pieces(self) -> tuple[tuple[Fraction, Fraction, Fraction], ...]:
        return tuple(zip(self._lo, self._hi, self._off))

    def __len__(self) -> int:
        return len(self._lo)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PartialTranslation) and \
            (self._lo, self._hi, self._off) == (other._lo, other._hi, other._off)

    def __hash__(self) -> int:
        return hash((self._lo, self._hi, self._off))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name or '?'}, {len(self._lo)} pieces)"

    def offsets(self) -> StepFunction:
        s = StepFunction.__new__(StepFunction)
        s._lo, s._hi, s._val = self._lo, self._hi, self._off
        return s

    def image_offsets(self) -> StepFunction:
        """Offsets indexed by image coordinates."""
        if self._img_step is None:
            self._img_step = StepFunction((lo + o, hi + o, o) for lo, hi, o in self.pieces)
        return self._img_step

    def domain(self) -> IntervalSet:
        return self.offsets().carrier

    def image(self) -> IntervalSet:
        return self.image_offsets().carrier

    def apply(self, x) -> Fraction:
        x = frac(x)
        k = bisect.bisect_right(self._lo, x) - 1
        if k < 0 or x >= self._hi[k]:
            raise DomainError(f"{x} is outside the domain of {self.name or 'the map'}")
        return x + self._off[k]

    __call__ = apply

    def apply_set(self, a: IntervalSet) -> IntervalSet:
        """Image of a ∩ domain."""
        part = overlay(self.offsets(), StepFunction.constant(a, None), lambda o, _: o)
        return IntervalSet((lo + o, hi + o) for lo, hi, o in part.pieces)

    def preimage(self, a: IntervalSet) -> IntervalSet:
        return self.inverse().apply_set(a)

    def restrict(self, a: IntervalSet) -> PartialTranslation:
        part = overlay(self.offsets(), StepFunction.constant(a, None), lambda o, _: o)
        return PartialTranslation(part, name=self.name)

    def inverse(self) -> PartialTranslation:
        if self._inv is None:
            inv = type(self).__new__(type(self))
            PartialTranslation.__init__(inv, ((lo + o, hi + o, -o) for lo, hi, o in self.pieces),
                                        name=f"{self.name}^-1")
            inv._inv = self
            self._inv = inv
        return self._inv

    def compose(self, inner: PartialTranslation) -> PartialTranslation:
        """self ∘ inner: apply inner first. Defined where inner lands inside self's domain."""
        joined = overlay(inner.image_offsets(), self.offsets(), lambda gi, fo: (gi, fo))
        out = PartialTranslation(((lo - gi, hi - gi, gi + fo) for lo, hi, (gi, fo) in joined.pieces),
                                 name=f"{self.name}∘{inner.name}")
        return out

    def pull(self, h: StepFunction) -> StepFunction:
        """h ∘ self as a step function on {x : self(x) ∈ carrier(h)}."""
        joined = overlay(self.image_offsets(), h, lambda o, v: (o, v))
        return StepFunction((lo - o, hi - o, v) for lo, hi, (o, v) in joined.pieces)

    def combine(self, other: PartialTranslation) -> PartialTranslation:
        """Disjoint union of two partial maps."""
        return PartialTranslation(list(self.pieces) + list(other.pieces), name=self.name)

    @staticmethod
    def combine_all(parts: Sequence[PartialTranslation], name: str = "") -> PartialTranslation:
        return PartialTranslation([p for part in parts for p in part.pieces], name=name)

    def agrees_with(self, other: PartialTranslation) -> IntervalSet:
        """Points where both maps are defined and send x to the same place."""
        return overlay(self.offsets(), other.offsets(), lambda a, b: a == b).level_set(True)

    def is_bijection(self) -> bool:
        return self.domain() == IntervalSet.full() and self.image() == IntervalSet.full()


class PiecewiseTranslation(PartialTranslation):
    """A measure-preserving bijection of [0, 1) given by finitely many rigid pieces."""

    __slots__ = ()

    def __init__(self, pieces: Iterable[tuple[Fraction, Fraction, Fraction]] = (), name: str = "",
                 check: bool = True, presorted: bool = False):
        super().__init__(pieces, name=name, presorted=presorted)
        if check:
            self.validate()

    def validate(self) -> None:
        if self.domain() != IntervalSet.full():
            raise NotABijectionError(f"{self.name or 'map'}: domain pieces do not cover [0,1)")
        try:
            img = self.image_offsets()
        except PartitionError as exc:
            raise NotABijectionError(f"{self.name or 'map'}: image pieces overlap") from exc
        if img.carrier != IntervalSet.full():
            raise NotABijectionError(f"{self.name or 'map'}: image pieces do not partition [0,1)")

    @classmethod
    def identity(cls) -> PiecewiseTranslation:
        return cls([(ZERO, ONE, ZERO)], name="id", check=False)

    @classmethod
    def from_partial(cls, p: PartialTranslation, name: str = "", check: bool = True) -> PiecewiseTranslation:
        out = cls.__new__(cls)
        PartialTranslation.__init__(out, p.offsets(), name=name or p.name)
        if check:
            out.validate()
        return out

    def compose(self, inner: PartialTranslation) -> PartialTranslation:
        res = super().compose(inner)
        if isinstance(inner, PiecewiseTranslation):
            return PiecewiseTranslation.from_partial(res, check=False)
        return res

    def power(self, k: int) -> PiecewiseTranslation:
        """Exact k-fold composition; negative k uses the inverse."""
        if k == 0:
            return PiecewiseTranslation.identity()
        if k == 1:
            return self
        if k < 0:
            return self.inverse().power(-k)
        cached = self._powers.get(k)
        if cached is not None:
            return cached
        half = self.power(k // 2)
        res = half.compose(half)
        if k % 2:
            res = self.compose(res)
        res.name = f"{self.name}^{k}"
        self._powers[k] = res
        return res

    def inverse(self) -> PiecewiseTranslation:
        if self._inv is None:
            inv = PiecewiseTranslation.__new__(PiecewiseTranslation)
            PartialTranslation.__init__(inv, ((lo + o, hi + o, -o) for lo, hi, o in self.pieces),
                                        name=f"{self.name}^-1")
            inv._inv = self
            self._inv = inv
        return self._inv

    def orbit(self, x, steps: int) -> list[Fraction]:
        out = [frac(x)]
        for _ in range(steps):
            out.append(self.apply(out[-1]))
        return out


def apply(f: PartialTranslation, x) -> Fraction:
    return f.apply(x)


def apply_set(f: PartialTranslation, a: IntervalSet) -> IntervalSet:
    return f.apply_set(a)


def power(f: PiecewiseTranslation, k: int) -> PiecewiseTranslation:
    return f.power(k)


def flatten_powers(f: PiecewiseTranslation, exponent: StepFunction, name: str = "") -> PiecewiseTranslation:
    """The map x ↦ f^{e(x)}(x) for an integer step function e on [0, 1)."""
    parts = [f.power(e).restrict(region) for e, region in sorted(exponent.level_sets().items())]
    out = PartialTranslation.combine_all(parts)
    return PiecewiseTranslation.from_partial(out, name=name)


def iterate_preimage(f: PiecewiseTranslation, a: IntervalSet, k: int) -> IntervalSet:
    """f^{-k}(a) by k single-step set pullbacks (k < 0 pushes forward)."""
    g = f.inverse() if k >= 0 else f
    for _ in range(abs(k)):
        a = g.apply_set(a)
    return a


def power_agreement(f: PiecewiseTranslation, g: PiecewiseTranslation, k: int) -> IntervalSet:
    """{x : f^k x = g^k x} without forming either power on all of [0, 1).

    Points whose g-orbit stays where f and g agree for every step are handled by set
    pullbacks; the remainder is small and is pushed through both maps piece by piece.
    """
    if k == 0:
        return IntervalSet.full()
    if k < 0:
        return power_agreement(f.inverse(), g.inverse(), -k)
    one = f.agrees_with(g)
    good = one
    for _ in range(k - 1):
        good = one & g.inverse().apply_set(good)
    rest = good.complement()
    if not rest:
        return good
    fa = PartialTranslation.identity_on(rest)
    ga = fa
    for _ in range(k):
        fa = f.compose(fa)
        ga = g.compose(ga)
    return good | fa.agrees_with(ga)


def pullback_partition(f: PiecewiseTranslation, p: LabeledPartition) -> LabeledPartition:
    """The partition f^{-1}p: atom i becomes {x : f(x) ∈ P_i}."""
    inv = f.inverse()
    return LabeledPartition(((lab, inv.apply_set(s)) for lab, s in p.atoms),
                            carrier=inv.apply_set(p.carrier), check=False)


def pullback_labels(f: PartialTranslation, labels: StepFunction) -> StepFunction:
    return f.pull(labels)


@dataclass(frozen=True)
class ReturnStructure:
    base: IntervalSet
    cells: tuple[tuple[IntervalSet, int], ...]

    def kac_sum(self) -> Fraction:
        return sum((t * c.measure for c, t in self.cells), ZERO)

    def return_time(self) -> StepFunction:
        return StepFunction.from_regions(self.cells)


def first_return(f: PiecewiseTranslation, base: IntervalSet, max_steps: int) -> ReturnStructure:
    if base.measure == 0:
        raise ValueError("first return needs a base of positive measure")
    cur = PartialTranslation.identity_on(base)
    cells = []
    for t in range(1, max_steps + 1):
        cur = f.compose(cur)
        hit = cur.preimage(base)
        if hit:
            cells.append((hit, t))
            cur = cur.restrict(cur.domain() - hit)
        if len(cur) == 0:
            return ReturnStructure(base, tuple(cells))
    raise IncompleteReturnError(cur.domain(), max_steps)


@dataclass(frozen=True)
class RankOneSystem:
    """A single cutting-and-stacking column, closed up into a bijection by wrapping top to bottom."""

    levels: tuple[tuple[Fraction, Fraction], ...]
    map: PiecewiseTranslation
    cuts: tuple[int, ...]

    @property
    def height(self) -> int:
        return len(self.levels)

    def level(self, h: int) -> IntervalSet:
        lo, hi = self.levels[h]
        return IntervalSet._canonical(((lo, hi),))

    def canonical_base(self, height: int) -> IntervalSet:
        """Union of column levels at multiples of `height` that have a full stack of `height` above."""
        if height < 1:
            raise ConfigError("tower height must be positive")
        starts = range(0, self.height - height + 1, height)
        return IntervalSet(self.levels[h] for h in starts)

    def height_function(self) -> StepFunction:
        return StepFunction((lo, hi, h) for h, (lo, hi) in enumerate(self.levels))


def rank_one_system(cuts: Sequence[int], spacers: Sequence[Sequence[int]] | None = None,
                    name: str = "S") -> RankOneSystem:
    if not cuts:
        raise ConfigError("cut sequence is empty")
    if any(int(c) != c or c < 2 for c in cuts):
        raise ConfigError("every cut count must be an integer ≥ 2")
    if spacers is None:
        spacers = [[0] * c for c in cuts]
    if len(spacers) != len(cuts):
        raise ConfigError("need one spacer vector per cutting stage")
    for c, sp in zip(cuts, spacers):
        if len(sp) != c:
            raise ConfigError(f"spacer vector {list(sp)} does not match cut count {c}")
        if any(s < 0 for s in sp):
            raise ConfigError("spacer counts must be nonnegative")

    width = Q(1)
    column: list[Fraction] = [ZERO]  # level starts in raw coordinates
    used = Q(1)
    for c, sp in zip(cuts, spacers):
        w = width / c
        new: list[Fraction] = []
        for j in range(c):
            new.extend(a + j * w for a in column)
            for _ in range(sp[j]):
                new.append(used)
                used += w
        column = new
        width = w
    scale = used
    levels = tuple((a / scale, (a + width) / scale) for a in column)
    h = len(levels)
    pieces = [(levels[i][0], levels[i][1], levels[(i + 1) % h][0] - levels[i][0]) for i in range(h)]
    f = PiecewiseTranslation(pieces, name=name)
    return RankOneSystem(levels=levels, map=f, cuts=tuple(cuts))


def build_rank_one(cuts: Sequence[int], spacers: Sequence[Sequence[int]] | None = None,
                   name: str = "S") -> PiecewiseTranslation:
    return rank_one_system(cuts, spacers, name=name).map


def odometer_system(depth: int = 12, radix: int = 2) -> RankOneSystem:
    return rank_one_system([radix] * depth, name="odometer")


def odometer(depth: int = 12, radix: int = 2) -> PiecewiseTranslation:
    """Finite-depth adding machine; it agrees with the true odometer off the top cell."""
    return odometer_system(depth, radix).map
