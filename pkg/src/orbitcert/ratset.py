"""Exact rational interval sets, labeled partitions, distributions and step functions.

Everything lives in [0, 1) and uses half-open intervals, so single points are
null and vanish under normalization. Rationals are gmpy2 mpq values; they compare,
hash and mix with fractions.Fraction, and are several times faster.
"""

from __future__ import annotations

import bisect
from fractions import Fraction
from typing import Any, Callable, Hashable, Iterable, Iterator, Mapping, Sequence

import gmpy2

Number = int | Fraction | str

Q = gmpy2.mpq
Rational = type(Q(0))
_MPZ = type(gmpy2.mpz(0))
ZERO = Q(0)
ONE = Q(1)


class DomainError(ValueError):
    """An endpoint or point lies outside [0, 1]."""


class DegenerateCarrierError(ValueError):
    """A distribution was requested over a null set."""


class ShapeError(ValueError):
    """Two labeled objects do not share the same ordered labels."""


class PartitionError(ValueError):
    """Atoms overlap, labels repeat, or the atoms do not cover the carrier."""


def frac(v: Number) -> Fraction:
    """Coerce ints, Fractions and strings like "3/8" to an exact rational."""
    if type(v) is Rational:
        return v
    if isinstance(v, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(v, (int, str, Fraction, _MPZ)):
        return Q(v)
    raise TypeError(f"cannot use {type(v).__name__} as an exact rational")


def frac_str(v: Fraction) -> str:
    return f"{v.numerator}/{v.denominator}" if v.denominator != 1 else str(v.numerator)


def _boolean(a: tuple, b: tuple, keep: Callable[[bool, bool], bool]) -> list:
    """Sweep the endpoints of two canonical interval tuples and keep segments where keep(in_a, in_b)."""
    pa = [x for iv in a for x in iv]
    pb = [x for iv in b for x in iv]
    i = j = 0
    na, nb = len(pa), len(pb)
    ina = inb = False
    cur = False
    start = ZERO
    out = []
    while i < na or j < nb:
        if j >= nb or (i < na and pa[i] < pb[j]):
            x = pa[i]
            ina = not ina
            i += 1
        elif i >= na or pb[j] < pa[i]:
            x = pb[j]
            inb = not inb
            j += 1
        else:
            x = pa[i]
            ina = not ina
            inb = not inb
            i += 1
            j += 1
        now = keep(ina, inb)
        if now != cur:
            if now:
                start = x
            else:
                out.append((start, x))
            cur = now
    return out


class IntervalSet:
    """A finite union of half-open rational intervals inside [0, 1), stored canonically."""

    __slots__ = ("_iv", "_measure", "_hash")

    def __init__(self, pairs: Iterable[tuple[Number, Number]] = ()):
        self._iv = _normalize(pairs)
        self._measure = None
        self._hash = None

    @classmethod
    def _canonical(cls, iv: Sequence[tuple[Fraction, Fraction]]) -> IntervalSet:
        obj = cls.__new__(cls)
        obj._iv = tuple(iv)
        obj._measure = None
        obj._hash = None
        return obj

    @classmethod
    def empty(cls) -> IntervalSet:
        return _EMPTY

    @classmethod
    def full(cls) -> IntervalSet:
        return _FULL

    @classmethod
    def interval(cls, lo: Number, hi: Number) -> IntervalSet:
        return cls([(lo, hi)])

    @property
    def intervals(self) -> tuple[tuple[Fraction, Fraction], ...]:
        return self._iv

    @property
    def measure(self) -> Fraction:
        if self._measure is None:
            self._measure = sum((hi - lo for lo, hi in self._iv), ZERO)
        return self._measure

    def is_empty(self) -> bool:
        return not self._iv

    def __bool__(self) -> bool:
        return bool(self._iv)

    def __len__(self) -> int:
        return len(self._iv)

    def __iter__(self) -> Iterator[tuple[Fraction, Fraction]]:
        return iter(self._iv)

    def __contains__(self, x: Number) -> bool:
        x = frac(x)
        k = bisect.bisect_right(self._iv, (x, ONE + 1)) - 1
        return k >= 0 and self._iv[k][0] <= x < self._iv[k][1]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, IntervalSet) and self._iv == other._iv

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._iv)
        return self._hash

    def __repr__(self) -> str:
        if not self._iv:
            return "IntervalSet(∅)"
        body = " ∪ ".join(f"[{frac_str(lo)},{frac_str(hi)})" for lo, hi in self._iv)
        return f"IntervalSet({body})"

    def union(self, other: IntervalSet) -> IntervalSet:
        if not other._iv:
            return self
        if not self._iv:
            return other
        return IntervalSet._canonical(_boolean(self._iv, other._iv, lambda p, q: p or q))

    def intersect(self, other: IntervalSet) -> IntervalSet:
        if not self._iv or not other._iv:
            return _EMPTY
        return IntervalSet._canonical(_boolean(self._iv, other._iv, lambda p, q: p and q))

    def difference(self, other: IntervalSet) -> IntervalSet:
        if not self._iv or not other._iv:
            return self
        return IntervalSet._canonical(_boolean(self._iv, other._iv, lambda p, q: p and not q))

    def symmetric_difference(self, other: IntervalSet) -> IntervalSet:
        return IntervalSet._canonical(_boolean(self._iv, other._iv, lambda p, q: p != q))

    __or__ = union
    __and__ = intersect
    __sub__ = difference
    __xor__ = symmetric_difference

    def complement(self) -> IntervalSet:
        return _FULL.difference(self)

    def issubset(self, other: IntervalSet) -> bool:
        return not self.difference(other)

    def isdisjoint(self, other: IntervalSet) -> bool:
        return not self.intersect(other)

    def translate(self, offset: Number) -> IntervalSet:
        offset = frac(offset)
        return IntervalSet([(lo + offset, hi + offset) for lo, hi in self._iv])

    def split_equal(self, parts: int) -> list[IntervalSet]:
        """Cut the set into `parts` consecutive pieces of equal measure, in left-to-right order."""
        if parts < 1:
            raise ValueError("parts must be positive")
        step = self.measure / parts
        out: list[list[tuple[Fraction, Fraction]]] = [[] for _ in range(parts)]
        idx = 0
        filled = ZERO
        for lo, hi in self._iv:
            while lo < hi and idx < parts:
                room = step - filled
                take = min(room, hi - lo)
                out[idx].append((lo, lo + take))
                lo += take
                filled += take
                if filled == step:
                    idx += 1
                    filled = ZERO
        return [IntervalSet._canonical(_coalesce(p)) for p in out]

    def to_json(self) -> list[list[str]]:
        return [[frac_str(lo), frac_str(hi)] for lo, hi in self._iv]

    @classmethod
    def from_json(cls, data: Iterable[Sequence[str]]) -> IntervalSet:
        return cls((frac(lo), frac(hi)) for lo, hi in data)

    @staticmethod
    def union_all(sets: Iterable[IntervalSet]) -> IntervalSet:
        pairs = [iv for s in sets for iv in s._iv]
        return IntervalSet._canonical(_merge_sorted(sorted(pairs)))


def _coalesce(pairs: list[tuple[Fraction, Fraction]]) -> list[tuple[Fraction, Fraction]]:
    out: list[tuple[Fraction, Fraction]] = []
    for lo, hi in pairs:
        if lo >= hi:
            continue
        if out and out[-1][1] >= lo:
            if hi > out[-1][1]:
                out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return out


def _merge_sorted(pairs: list[tuple[Fraction, Fraction]]) -> list[tuple[Fraction, Fraction]]:
    return _coalesce(pairs)


def _normalize(pairs: Iterable[tuple[Number, Number]]) -> tuple[tuple[Fraction, Fraction], ...]:
    clean = []
    for lo, hi in pairs:
        lo, hi = frac(lo), frac(hi)
        if lo < 0 or hi > 1 or lo > 1 or hi < 0:
            raise DomainError(f"interval [{lo}, {hi}) leaves [0, 1]")
        if lo > hi:
            raise DomainError(f"interval [{lo}, {hi}) has lo > hi")
        if lo < hi:
            clean.append((lo, hi))
    clean.sort()
    return tuple(_merge_sorted(clean))


def normalize(raw: Iterable[tuple[Number, Number]]) -> IntervalSet:
    return IntervalSet(raw)


def algebra(a: IntervalSet, b: IntervalSet, op: str) -> IntervalSet:
    ops = {
        "union": a.union,
        "intersect": a.intersect,
        "difference": a.difference,
        "symmetric-difference": a.symmetric_difference,
    }
    if op not in ops:
        raise ValueError(f"unknown set operation {op!r}")
    return ops[op](b)


_EMPTY = IntervalSet._canonical(())
_FULL = IntervalSet._canonical(((ZERO, ONE),))


class LabeledPartition:
    """Ordered, labeled, pairwise disjoint atoms covering a declared carrier (default [0, 1))."""

    __slots__ = ("_atoms", "_carrier", "_index")

    def __init__(self, atoms: Iterable[tuple[str, IntervalSet]], carrier: IntervalSet | None = None,
                 check: bool = True):
        self._atoms = tuple((str(lab), s) for lab, s in atoms)
        self._index = {lab: i for i, (lab, _) in enumerate(self._atoms)}
        if check:
            if len(self._index) != len(self._atoms):
                raise PartitionError("partition labels must be unique")
            union = IntervalSet.union_all(s for _, s in self._atoms)
            total = sum((s.measure for _, s in self._atoms), ZERO)
            if total != union.measure:
                raise PartitionError("partition atoms overlap")
            target = IntervalSet.full() if carrier is None else carrier
            if union != target:
                raise PartitionError("partition atoms do not cover the carrier")
        self._carrier = IntervalSet.full() if carrier is None else carrier

    @property
    def atoms(self) -> tuple[tuple[str, IntervalSet], ...]:
        return self._atoms

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self._atoms)

    @property
    def carrier(self) -> IntervalSet:
        return self._carrier

    def __len__(self) -> int:
        return len(self._atoms)

    def __iter__(self) -> Iterator[tuple[str, IntervalSet]]:
        return iter(self._atoms)

    def __getitem__(self, label: str) -> IntervalSet:
        return self._atoms[self._index[label]][1]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabeledPartition) and self._atoms == other._atoms \
            and self._carrier == other._carrier

    def __hash__(self) -> int:
        return hash((self._atoms, self._carrier))

    def __repr__(self) -> str:
        return f"LabeledPartition({[lab for lab, _ in self._atoms]})"

    def index_of(self, label: str) -> int:
        return self._index[label]

    def label_at(self, x: Number) -> str:
        x = frac(x)
        for lab, s in self._atoms:
            if x in s:
                return lab
        raise DomainError(f"{x} is outside the partition carrier")

    def join(self, other: LabeledPartition, sep: str = "|") -> LabeledPartition:
        """Common refinement with labels "a|b", dropping null intersections."""
        atoms = []
        for la, sa in self._atoms:
            for lb, sb in other._atoms:
                s = sa & sb
                if s:
                    atoms.append((f"{la}{sep}{lb}", s))
        return LabeledPartition(atoms, carrier=self._carrier & other._carrier, check=False)

    def restrict(self, carrier: IntervalSet) -> LabeledPartition:
        atoms = [(lab, s & carrier) for lab, s in self._atoms]
        return LabeledPartition([(lab, s) for lab, s in atoms if s], carrier=self._carrier & carrier,
                                check=False)

    def refines(self, other: LabeledPartition) -> bool:
        """True when every atom of self lies inside a single atom of other."""
        for _, s in self._atoms:
            if not any(s.issubset(t) for _, t in other._atoms):
                return False
        return True

    def as_step(self) -> StepFunction:
        """The label function x ↦ label of the atom containing x."""
        return StepFunction.from_regions((s, lab) for lab, s in self._atoms)

    def to_json(self) -> list[dict[str, Any]]:
        return [{"label": lab, "set": s.to_json()} for lab, s in self._atoms]

    @classmethod
    def equipartition(cls, n: int, prefix: str = "") -> LabeledPartition:
        """[0,1) cut into n equal intervals labeled 1..n."""
        if n < 1:
            raise ValueError("need at least one atom")
        return cls([(f"{prefix}{i + 1}", IntervalSet.interval(Q(i, n), Q(i + 1, n)))
                    for i in range(n)], check=False)

    @classmethod
    def from_sets(cls, sets: Mapping[str, IntervalSet], carrier: IntervalSet | None = None) -> LabeledPartition:
        return cls(list(sets.items()), carrier=carrier)


class DistributionVector:
    """Ordered (label, mass) entries."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Iterable[tuple[str, Number]]):
        self._entries = tuple((str(lab), frac(m)) for lab, m in entries)

    @property
    def entries(self) -> tuple[tuple[str, Fraction], ...]:
        return self._entries

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self._entries)

    @property
    def masses(self) -> tuple[Fraction, ...]:
        return tuple(m for _, m in self._entries)

    def __getitem__(self, label: str) -> Fraction:
        for lab, m in self._entries:
            if lab == label:
                return m
        raise KeyError(label)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DistributionVector) and self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def __repr__(self) -> str:
        inner = ", ".join(f"{lab}:{frac_str(m)}" for lab, m in self._entries)
        return f"DistributionVector({inner})"

    def total(self) -> Fraction:
        return sum(self.masses, ZERO)

    def product(self, other: DistributionVector, sep: str = "|") -> DistributionVector:
        return DistributionVector((f"{la}{sep}{lb}", ma * mb)
                                  for la, ma in self._entries for lb, mb in other._entries)

    def to_json(self) -> list[list[str]]:
        return [[lab, frac_str(m)] for lab, m in self._entries]


def distribution(carrier: IntervalSet, p: LabeledPartition) -> DistributionVector:
    """Relative mass of each atom inside the carrier."""
    total = carrier.measure
    if total == 0:
        raise DegenerateCarrierError("distribution over a null carrier is undefined")
    return DistributionVector((lab, (carrier & s).measure / total) for lab, s in p.atoms)


def dist_distance(u: DistributionVector, v: DistributionVector) -> Fraction:
    """Max-metric distance between two distributions over the same ordered labels."""
    if u.labels != v.labels:
        raise ShapeError(f"label mismatch: {u.labels} vs {v.labels}")
    return max((abs(a - b) for a, b in zip(u.masses, v.masses)), default=ZERO)


def joint_distribution(p: LabeledPartition, q: LabeledPartition, sep: str = "|") -> DistributionVector:
    """Masses of every pair of atoms, including zero pairs, in product order."""
    return DistributionVector((f"{la}{sep}{lb}", (sa & sb).measure)
                              for la, sa in p.atoms for lb, sb in q.atoms)


class StepFunction:
    """A finitely-valued function that is constant on finitely many disjoint half-open intervals.

    Values can be any hashable. Adjacent pieces with the same value are merged, so
    the representation is canonical.
    """

    __slots__ = ("_lo", "_hi", "_val")

    def __init__(self, pieces: Iterable[tuple[Fraction, Fraction, Hashable]] = (), presorted: bool = False):
        ps = pieces if isinstance(pieces, list) else list(pieces)
        if not presorted:
            ps.sort(key=lambda p: p[0])
        lo_l: list[Fraction] = []
        hi_l: list[Fraction] = []
        val_l: list[Hashable] = []
        last_hi = last_v = None
        for lo, hi, v in ps:
            if not lo < hi:
                continue
            if last_hi is not None:
                if lo < last_hi:
                    raise PartitionError("step-function pieces overlap")
                if lo == last_hi and last_v == v:
                    hi_l[-1] = last_hi = hi
                    continue
            lo_l.append(lo)
            hi_l.append(hi)
            val_l.append(v)
            last_hi, last_v = hi, v
        self._lo = tuple(lo_l)
        self._hi = tuple(hi_l)
        self._val = tuple(val_l)

    @classmethod
    def constant(cls, carrier: IntervalSet, value: Hashable) -> StepFunction:
        return cls(((lo, hi, value) for lo, hi in carrier), presorted=True)

    @classmethod
    def from_regions(cls, regions: Iterable[tuple[IntervalSet, Hashable]]) -> StepFunction:
        return cls((lo, hi, v) for s, v in regions for lo, hi in s)

    @property
    def pieces(self) -> tuple[tuple[Fraction, Fraction, Hashable], ...]:
        return tuple(zip(self._lo, self._hi, self._val))

    def __len__(self) -> int:
        return len(self._lo)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StepFunction) and (self._lo, self._hi, self._val) == \
            (other._lo, other._hi, other._val)

    def __hash__(self) -> int:
        return hash((self._lo, self._hi, self._val))

    def __repr__(self) -> str:
        return f"StepFunction({len(self._lo)} pieces, values={sorted(set(map(repr, self._val)))[:6]})"

    @property
    def carrier(self) -> IntervalSet:
        return IntervalSet._canonical(_coalesce(list(zip(self._lo, self._hi))))

    def values(self) -> set:
        return set(self._val)

    def value_at(self, x: Number, default: Any = KeyError) -> Any:
        x = frac(x)
        k = bisect.bisect_right(self._lo, x) - 1
        if k >= 0 and x < self._hi[k]:
            return self._val[k]
        if default is KeyError:
            raise KeyError(f"{x} is outside the step-function carrier")
        return default

    def level_sets(self) -> dict[Hashable, IntervalSet]:
        buckets: dict[Hashable, list] = {}
        for lo, hi, v in zip(self._lo, self._hi, self._val):
            buckets.setdefault(v, []).append((lo, hi))
        return {v: IntervalSet._canonical(_coalesce(p)) for v, p in buckets.items()}

    def level_set(self, value: Hashable) -> IntervalSet:
        return IntervalSet._canonical(_coalesce(
            [(lo, hi) for lo, hi, v in zip(self._lo, self._hi, self._val) if v == value]))

    def where(self, pred: Callable[[Any], bool]) -> IntervalSet:
        return IntervalSet._canonical(_coalesce(
            [(lo, hi) for lo, hi, v in zip(self._lo, self._hi, self._val) if pred(v)]))

    def map(self, fn: Callable[[Any], Hashable]) -> StepFunction:
        return StepFunction(((lo, hi, fn(v)) for lo, hi, v in zip(self._lo, self._hi, self._val)),
                            presorted=True)

    def restrict(self, carrier: IntervalSet) -> StepFunction:
        return overlay(self, StepFunction.constant(carrier, None), lambda a, _: a)

    def union(self, other: StepFunction) -> StepFunction:
        """Disjoint union of two step functions on disjoint carriers."""
        return StepFunction(list(self.pieces) + list(other.pieces))

    def integral(self, weight: Callable[[Any], Fraction] = lambda v: v) -> Fraction:
        return sum(((hi - lo) * weight(v) for lo, hi, v in zip(self._lo, self._hi, self._val)), ZERO)

    def measure_by_value(self) -> dict[Hashable, Fraction]:
        out: dict[Hashable, Fraction] = {}
        for lo, hi, v in zip(self._lo, self._hi, self._val):
            out[v] = out.get(v, ZERO) + (hi - lo)
        return out

    def to_json(self) -> list[list[Any]]:
        return [[frac_str(lo), frac_str(hi), v] for lo, hi, v in zip(self._lo, self._hi, self._val)]


_SKIP = object()


def overlay(f: StepFunction, g: StepFunction, fn: Callable[[Any, Any], Any]) -> StepFunction:
    """Combine two step functions on the intersection of their carriers.

    If fn returns the module-level SKIP sentinel the piece is dropped.
    """
    out = []
    i = j = 0
    flo, fhi, fv = f._lo, f._hi, f._val
    glo, ghi, gv = g._lo, g._hi, g._val
    nf, ng = len(flo), len(glo)
    bisect_right = bisect.bisect_right
    while i < nf and j < ng:
        a, b = flo[i], glo[j]
        # skip runs that end before the other side starts
        if fhi[i] <= b:
            i = bisect_right(fhi, b, i + 1)
            continue
        if ghi[j] <= a:
            j = bisect_right(ghi, a, j + 1)
            continue
        lo = a if a > b else b
        fh, gh = fhi[i], ghi[j]
        hi = fh if fh < gh else gh
        v = fn(fv[i], gv[j])
        if v is not _SKIP:
            out.append((lo, hi, v))
        if fh <= gh:
            i += 1
        else:
            j += 1
    return StepFunction(out, presorted=True)


SKIP = _SKIP


def stack(funcs: Sequence[StepFunction]) -> StepFunction:
    """Tuple-valued step function (f1(x), ..., fk(x)) on the common carrier."""
    if not funcs:
        return StepFunction.constant(IntervalSet.full(), ())
    acc = funcs[0].map(lambda v: (v,))
    for f in funcs[1:]:
        acc = overlay(acc, f, lambda a, b: a + (b,))
    return acc


def equal_set(f: StepFunction, g: StepFunction) -> IntervalSet:
    """Where both functions are defined and agree."""
    return overlay(f, g, lambda a, b: a == b).level_set(True)
