"""Rokhlin towers of piecewise translations: levels, pure partitions, names and side conditions."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .dynamics import ConfigError, PartialTranslation, PiecewiseTranslation
from .ratset import (
    ONE,
    Q,
    DistributionVector,
    IntervalSet,
    LabeledPartition,
    StepFunction,
    Rational,
    dist_distance,
    frac_str,
    overlay,
)


class NotATowerError(ValueError):
    def __init__(self, s: int, t: int):
        self.heights = (s, t)
        super().__init__(f"tower levels {s} and {t} intersect in positive measure")


class MixedNameError(ValueError):
    """An atom is split across partition atoms at some height of the window."""


class SearchExhaustedError(RuntimeError):
    pass


class Tower:
    """Levels f^t(B), t = 0..height-1, pairwise disjoint.

    `columns[t]` is f^t restricted to the base; `columns[height]` is the exit map.
    """

    def __init__(self, f: PiecewiseTranslation, base: IntervalSet, height: int,
                 columns: Sequence[PartialTranslation]):
        self.map = f
        self.base = base
        self.height = height
        self.columns = tuple(columns)
        self.levels = tuple(c.image() for c in self.columns[:height])
        self._union = None
        self._height_fn = None
        self._to_base = None

    @property
    def heights(self) -> range:
        return range(self.height)

    @property
    def union(self) -> IntervalSet:
        if self._union is None:
            self._union = IntervalSet.union_all(self.levels)
        return self._union

    @property
    def achieved_epsilon(self) -> Fraction:
        return ONE - self.height * self.base.measure

    def level(self, t: int) -> IntervalSet:
        return self.levels[t]

    def transport(self, subset: IntervalSet, t: int) -> IntervalSet:
        """f^t of a subset of the base."""
        return self.columns[t].apply_set(subset)

    def exit_map(self) -> PartialTranslation:
        return self.columns[self.height]

    def height_function(self) -> StepFunction:
        if self._height_fn is None:
            self._height_fn = StepFunction.from_regions((lev, t) for t, lev in enumerate(self.levels))
        return self._height_fn

    def to_base(self) -> PartialTranslation:
        """Map each tower point y = f^t(b) to its base point b."""
        if self._to_base is None:
            self._to_base = PartialTranslation.combine_all(
                [c.inverse() for c in self.columns[:self.height]], name="to-base")
        return self._to_base

    def spread(self, g: StepFunction) -> StepFunction:
        """Extend a step function on the base to the whole tower, constant along columns."""
        return self.to_base().pull(g)

    def coordinates(self, x) -> tuple[int, Fraction]:
        t = self.height_function().value_at(x)
        return t, self.to_base().apply(x)

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "base": self.base.to_json(),
            "base_measure": frac_str(self.base.measure),
            "achieved_epsilon": frac_str(self.achieved_epsilon),
        }


def _find_collision(levels: Sequence[IntervalSet]) -> tuple[int, int]:
    tagged = sorted((lo, hi, t) for t, lev in enumerate(levels) for lo, hi in lev)
    best = None
    reach_hi, reach_t = None, None
    for lo, hi, t in tagged:
        if reach_hi is not None and lo < reach_hi:
            pair = (min(t, reach_t), max(t, reach_t))
            if best is None or pair < best:
                best = pair
        if reach_hi is None or hi > reach_hi:
            reach_hi, reach_t = hi, t
    assert best is not None
    return best


def column_maps(f: PiecewiseTranslation, base: IntervalSet, steps: int) -> list[PartialTranslation]:
    cur = PartialTranslation.identity_on(base)
    cols = [cur]
    for _ in range(steps):
        cur = f.compose(cur)
        cols.append(cur)
    return cols


def tower_from_levels(f: PiecewiseTranslation, base: IntervalSet, height: int) -> Tower:
    if height < 1:
        raise ConfigError("tower height must be at least 1")
    cols = column_maps(f, base, height)
    levels = [c.image() for c in cols[:height]]
    union = IntervalSet.union_all(levels)
    if union.measure != height * base.measure:
        raise NotATowerError(*_find_collision(levels))
    return Tower(f, base, height, cols)


@dataclass(frozen=True)
class NamedAtom:
    name: tuple[str, ...]
    set: IntervalSet

    @property
    def label(self) -> str:
        return "(" + ",".join(self.name) + ")"


def _refine_names(cols: Sequence[PartialTranslation], base: IntervalSet, labels: StepFunction,
                  ) -> list[NamedAtom]:
    """Coarsest partition of the base on which every column level has a single label."""
    ids = StepFunction.constant(base, 0)
    history: list[tuple[int, str] | None] = [None]  # id -> (parent id, label)
    for col in cols:
        pulled = col.pull(labels)
        table: dict[tuple[int, str], int] = {}

        def relabel(a: int, b: str) -> int:
            key = (a, b)
            nid = table.get(key)
            if nid is None:
                nid = len(history)
                history.append(key)
                table[key] = nid
            return nid

        ids = overlay(ids, pulled, relabel)
    buckets = ids.level_sets()
    atoms = []
    for nid, s in buckets.items():
        name = []
        cur = nid
        while history[cur] is not None:
            parent, lab = history[cur]
            name.append(lab)
            cur = parent
        atoms.append(NamedAtom(tuple(reversed(name)), s))
    if IntervalSet.union_all(a.set for a in atoms) != base:
        raise MixedNameError("some base points leave the partition carrier inside the window")
    atoms.sort(key=lambda a: a.label)
    return atoms


def pure_atoms(tower: Tower, p: LabeledPartition) -> list[NamedAtom]:
    return _refine_names(tower.columns[:tower.height], tower.base, p.as_step())


def pure_partition(tower: Tower, p: LabeledPartition) -> LabeledPartition:
    atoms = pure_atoms(tower, p)
    return LabeledPartition([(a.label, a.set) for a in atoms], carrier=tower.base, check=False)


def window_maps(f: PiecewiseTranslation, window: Iterable[int]) -> list[PiecewiseTranslation]:
    return [f.power(k) for k in window]


def name_of_point(f: PiecewiseTranslation, x, p: LabeledPartition, window: Iterable[int]) -> tuple[str, ...]:
    return tuple(p.label_at(f.power(k).apply(x)) for k in window)


def empirical_distribution(name: Sequence[str], p: LabeledPartition) -> DistributionVector:
    n = len(name)
    if n == 0:
        raise ValueError("window must be nonempty")
    return DistributionVector((lab, Q(sum(1 for s in name if s == lab), n)) for lab in p.labels)


def name_distribution_gap(f: PiecewiseTranslation, x_or_atom, p: LabeledPartition, window: Sequence[int],
                          reference: DistributionVector) -> Fraction:
    window = list(window)
    if not window:
        raise ValueError("window must be nonempty")
    if isinstance(x_or_atom, IntervalSet):
        name = []
        for k in window:
            img = f.power(k).apply_set(x_or_atom)
            hits = [lab for lab, s in p.atoms if (img & s).measure > 0]
            if len(hits) != 1:
                raise MixedNameError(f"atom is split across {hits} at offset {k}")
            name.append(hits[0])
    else:
        name = list(name_of_point(f, x_or_atom, p, window))
    return dist_distance(empirical_distribution(name, p), reference)


@dataclass
class AtomConditions:
    label: str
    measure: Fraction
    good_fraction: Fraction | None = None
    good_fraction_ok: bool | None = None
    good_membership_constant: bool | None = None
    aux_gap: Fraction | None = None
    aux_ok: bool | None = None
    aux_constant: bool | None = None

    def to_json(self) -> dict:
        def f(v):
            return frac_str(v) if isinstance(v, (Rational, Fraction)) else v
        return {k: f(v) for k, v in self.__dict__.items()}


@dataclass
class ConditionsReport:
    height: int
    requested_epsilon: Fraction
    achieved_epsilon: Fraction
    candidates_tried: int
    atoms: list[AtomConditions] = field(default_factory=list)
    good_fraction_threshold: Fraction | None = None
    aux_tolerance: Fraction | None = None

    @property
    def epsilon_ok(self) -> bool:
        return self.achieved_epsilon < self.requested_epsilon

    @property
    def good_ok(self) -> bool | None:
        vals = [a.good_fraction_ok for a in self.atoms if a.good_fraction_ok is not None]
        return all(vals) if vals else None

    @property
    def aux_ok(self) -> bool | None:
        vals = [a.aux_ok for a in self.atoms if a.aux_ok is not None]
        return all(vals) if vals else None

    @property
    def all_ok(self) -> bool:
        return self.epsilon_ok and self.good_ok is not False and self.aux_ok is not False

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "requested_epsilon": frac_str(self.requested_epsilon),
            "achieved_epsilon": frac_str(self.achieved_epsilon),
            "epsilon_ok": self.epsilon_ok,
            "good_fraction_threshold": frac_str(self.good_fraction_threshold)
            if self.good_fraction_threshold is not None else None,
            "good_ok": self.good_ok,
            "aux_tolerance": frac_str(self.aux_tolerance) if self.aux_tolerance is not None else None,
            "aux_ok": self.aux_ok,
            "all_ok": self.all_ok,
            "candidates_tried": self.candidates_tried,
            "atoms": [a.to_json() for a in self.atoms],
        }


def prune_base(f: PiecewiseTranslation, base: IntervalSet, height: int) -> IntervalSet:
    """Drop base points that come back to the base before `height` steps."""
    bad = IntervalSet.empty()
    inv = f.inverse()
    cur = base
    for _ in range(1, height):
        cur = inv.apply_set(cur)
        bad = bad | (cur & base)
    return base - bad


def _fraction_in(cols: Sequence[PartialTranslation], base: IntervalSet, target: IntervalSet,
                 ) -> list[tuple[IntervalSet, Fraction]]:
    """Split the base by the in/out word of its levels against `target`; give each piece its in-fraction."""
    ind = StepFunction.from_regions([(target, "1"), (target.complement(), "0")])
    atoms = _refine_names(cols, base, ind)
    n = len(cols)
    return [(a.set, Q(a.name.count("1"), n)) for a in atoms]


def evaluate_conditions(tower: Tower, requested_epsilon: Fraction, atoms: Sequence[tuple[str, IntervalSet]],
                        good_set: IntervalSet | None = None, good_threshold: Fraction | None = None,
                        aux_set: IntervalSet | None = None, aux_tolerance: Fraction | None = None,
                        candidates_tried: int = 1) -> ConditionsReport:
    report = ConditionsReport(height=tower.height, requested_epsilon=requested_epsilon,
                              achieved_epsilon=tower.achieved_epsilon, candidates_tried=candidates_tried,
                              good_fraction_threshold=good_threshold, aux_tolerance=aux_tolerance)
    cols = tower.columns[:tower.height]
    good_pieces = _fraction_in(cols, tower.base, good_set) if good_set is not None else None
    aux_pieces = _fraction_in(cols, tower.base, aux_set) if aux_set is not None else None
    aux_mu = aux_set.measure if aux_set is not None else None
    for label, s in atoms:
        ac = AtomConditions(label=label, measure=s.measure)
        if good_pieces is not None:
            fr = [f for piece, f in good_pieces if (piece & s).measure > 0]
            ac.good_fraction = min(fr)
            ac.good_membership_constant = len(set(fr)) == 1 and \
                sum(1 for piece, _ in good_pieces if (piece & s).measure > 0) == 1
            if good_threshold is not None:
                ac.good_fraction_ok = ac.good_fraction > good_threshold
        if aux_pieces is not None:
            gaps = []
            for piece, f in aux_pieces:
                if (piece & s).measure > 0:
                    # max-metric gap over the two labels {in, out}; both differences coincide
                    gaps.append(abs(f - aux_mu))
            ac.aux_gap = max(gaps)
            ac.aux_constant = len(gaps) == 1
            if aux_tolerance is not None:
                ac.aux_ok = ac.aux_gap < aux_tolerance
        report.atoms.append(ac)
    return report


def search_strong_tower(f: PiecewiseTranslation, height: int, epsilon: Fraction,
                        block_length: int | None = None, candidates: Sequence[IntervalSet] = (),
                        budget: int = 8, atom_partition: LabeledPartition | None = None,
                        good_set: IntervalSet | None = None, good_threshold: Fraction | None = None,
                        aux_set: IntervalSet | None = None, aux_tolerance: Fraction | None = None,
                        ) -> tuple[Tower, ConditionsReport]:
    """Try candidate bases in order, repairing collisions by pruning, and keep the best tower.

    The returned report measures every requested condition; failing conditions are reported,
    not raised.
    """
    if block_length is not None and height % block_length:
        raise ConfigError(f"tower height {height} is not a multiple of block length {block_length}")
    best: Tower | None = None
    tried = 0
    queue = list(candidates)
    while queue and tried < budget:
        base = queue.pop(0)
        tried += 1
        if base.measure == 0:
            continue
        try:
            tw = tower_from_levels(f, base, height)
        except NotATowerError:
            queue.insert(0, prune_base(f, base, height))
            continue
        if best is None or tw.achieved_epsilon < best.achieved_epsilon:
            best = tw
        if tw.achieved_epsilon < epsilon or tw.achieved_epsilon == 0:
            break
    if best is None or best.achieved_epsilon >= Q(1, 2):
        raise SearchExhaustedError(f"no tower of height {height} with epsilon below 1/2 "
                                   f"after {tried} candidates")
    if atom_partition is not None:
        atoms = [(lab, s) for lab, s in pure_partition(best, atom_partition).atoms]
    else:
        atoms = [("base", best.base)]
    report = evaluate_conditions(best, epsilon, atoms, good_set, good_threshold, aux_set, aux_tolerance,
                                 candidates_tried=tried)
    return best, report
