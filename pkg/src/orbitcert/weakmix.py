"""Weak-mixing construction: parameter scheduling, block assignments over pure atoms,
good positions and the per-stage mixing certificates.

Windows "m − C_K" are the heights m-1, ..., m-K; translation vectors of the rotation
permutations range over 1..K so that a new position m inside a rigid block comes from
old height m-k for exactly one k in that window.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .blockcode import BlockedCocycle, JKLPermutation, StageCocycle, rotation
from .dynamics import (
    ConfigError,
    PiecewiseTranslation,
    RankOneSystem,
    odometer_system,
    power_agreement,
)
from .ratset import (
    Q,
    ZERO,
    DistributionVector,
    IntervalSet,
    LabeledPartition,
    StepFunction,
    dist_distance,
    frac,
    frac_str,
    overlay,
    stack,
)
from .towers import (
    ConditionsReport,
    NamedAtom,
    SearchExhaustedError,
    _fraction_in,
    evaluate_conditions,
    pure_atoms,
    search_strong_tower,
)


class ScaleCapError(RuntimeError):
    def __init__(self, constraint: str, value: int, cap: int):
        self.constraint = constraint
        super().__init__(f"constraint '{constraint}' forces {value}, above the resource cap {cap}")


class BudgetError(RuntimeError):
    pass


def epsilon(n: int, c: int = 1) -> Fraction:
    return Q(1, 2 ** (n + c))


# ---------------------------------------------------------------- scheduling

@dataclass(frozen=True)
class Constraint:
    name: str
    lhs: Fraction
    relation: str
    rhs: Fraction
    holds: bool

    def to_json(self) -> dict:
        return {"name": self.name, "lhs": frac_str(frac(self.lhs)), "relation": self.relation,
                "rhs": frac_str(frac(self.rhs)), "holds": self.holds}


def _constraint(name: str, lhs, relation: str, rhs) -> Constraint:
    lhs, rhs = frac(lhs), frac(rhs)
    if relation == "<":
        ok = lhs < rhs
    elif relation == ">":
        ok = lhs > rhs
    elif relation == "divides":
        ok = rhs.denominator == 1 and lhs.denominator == 1 and lhs != 0 and rhs.numerator % lhs.numerator == 0
    else:
        raise ValueError(relation)
    return Constraint(name, lhs, relation, rhs, ok)


@dataclass
class StageParameters:
    n: int
    case: int
    K: int
    K_star: int
    L: int
    M: int
    eps: Fraction
    constraints: list[Constraint]
    chosen: str

    @property
    def conforming(self) -> bool:
        return all(c.holds for c in self.constraints)

    def to_json(self) -> dict:
        return {"n": self.n, "case": self.case, "K": self.K, "K_star": self.K_star, "L": self.L, "M": self.M,
                "epsilon": frac_str(self.eps), "chosen": self.chosen, "conforming": self.conforming,
                "constraints": [c.to_json() for c in self.constraints]}


def stage_constraints(n: int, K: int, K_star: int, eps: Fraction, L: int, M: int,
                      prev_L: Sequence[int], prev_M: int | None) -> list[Constraint]:
    out = [_constraint("K*^3/L < eps", Q(K_star ** 3, L), "<", eps)]
    if L > K:
        out.append(_constraint("(n + sum L_i)/(L - K) < eps", Q(n - 1 + sum(prev_L), L - K), "<", eps))
    else:
        out.append(Constraint("(n + sum L_i)/(L - K) < eps", Q(0), "<", eps, False))
    out.append(_constraint("M > L/eps", M, ">", Q(L) / eps))
    out.append(_constraint("L | M", L, "divides", M))
    if prev_M is not None:
        out.append(_constraint("M > M_prev", M, ">", prev_M))
    return out


def _next_pow2(v: int) -> int:
    p = 1
    while p < v:
        p *= 2
    return p


def schedule_next(n: int, case: int, K: int, K_star: int, eps: Fraction, prev_L: Sequence[int] = (),
                  prev_M: int | None = None, granularity: str = "int", cap: int | None = None,
                  L: int | None = None, M: int | None = None) -> StageParameters:
    """Smallest L and M meeting the stage inequalities, or an explicit override that is re-checked."""
    eps = frac(eps)
    chosen = "override" if (L is not None or M is not None) else "minimal"
    if L is None:
        by_k = int(math.floor(K_star ** 3 / eps)) + 1
        by_sum = int(math.floor(K + Q(n - 1 + sum(prev_L)) / eps)) + 1
        L = max(by_k, by_sum, K + 1)
        if granularity == "pow2":
            L = _next_pow2(L)
        if cap is not None and L > cap:
            name = "K*^3/L < eps" if by_k >= by_sum else "(n + sum L_i)/(L - K) < eps"
            raise ScaleCapError(name, L, cap)
    if M is None:
        by_eps = Q(L) / eps
        floor = max(by_eps, Q(prev_M or 0))
        M = L * (int(math.floor(floor / L)) + 1)
        if granularity == "pow2":
            M = _next_pow2(M)
            while M <= floor:
                M *= 2
        if cap is not None and M > cap:
            name = "M > L/eps" if by_eps >= (prev_M or 0) else "M > M_prev"
            raise ScaleCapError(name, M, cap)
    cons = stage_constraints(n, K, K_star, eps, L, M, prev_L, prev_M)
    return StageParameters(n, case, K, K_star, L, M, eps, cons, chosen)


# ---------------------------------------------------------------- sigma

@dataclass
class SigmaAssignment:
    K: int
    blocks: int
    mode: str
    seed: int | None
    cells: list[tuple[str, IntervalSet, tuple[int, ...]]]

    def cells_of(self, label: str) -> list[tuple[IntervalSet, tuple[int, ...]]]:
        return [(s, v) for lab, s, v in self.cells if lab == label]

    def block_law(self, label: str | None = None) -> list[dict[int, Fraction]]:
        """Measure-weighted law of the translation value in each block."""
        chosen = [(s, v) for lab, s, v in self.cells if label is None or lab == label]
        total = sum((s.measure for s, _ in chosen), ZERO)
        laws = []
        for q in range(self.blocks):
            law = {k: ZERO for k in range(1, self.K + 1)}
            for s, v in chosen:
                law[v[q]] += s.measure / total
            laws.append(law)
        return laws

    def max_marginal_gap(self) -> Fraction:
        labels = sorted({lab for lab, _, _ in self.cells})
        gap = ZERO
        for lab in labels:
            for law in self.block_law(lab):
                gap = max(gap, max(abs(p - Q(1, self.K)) for p in law.values()))
        return gap

    def summary(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "K": self.K, "blocks": self.blocks,
                "cells": len(self.cells), "max_marginal_gap": frac_str(self.max_marginal_gap())}


def assign_sigma(atoms: Sequence[tuple[str, IntervalSet]], K: int, block_count: int,
                 mode: str = "exact-uniform", seed: int = 0, budget: int = 1 << 14,
                 iid_cells: int = 32) -> SigmaAssignment:
    """Translation vectors (one value in 1..K per block) for cells of each atom."""
    if block_count == 0:
        return SigmaAssignment(K, 0, mode, None, [(lab, s, ()) for lab, s in atoms])
    cells: list[tuple[str, IntervalSet, tuple[int, ...]]] = []
    if mode == "exact-uniform":
        count = K ** block_count
        if count * len(atoms) > budget:
            raise BudgetError(f"exact-uniform needs {count} cells for each of {len(atoms)} atoms, over the "
                              f"budget {budget}; use seeded-iid")
        vectors = list(itertools.product(range(1, K + 1), repeat=block_count))
        for lab, s in atoms:
            for piece, vec in zip(s.split_equal(count), vectors):
                cells.append((lab, piece, vec))
        return SigmaAssignment(K, block_count, mode, None, cells)
    if mode == "seeded-iid":
        rng = random.Random(seed)
        for lab, s in atoms:
            for piece in s.split_equal(iid_cells):
                cells.append((lab, piece, tuple(rng.randint(1, K) for _ in range(block_count))))
        return SigmaAssignment(K, block_count, mode, seed, cells)
    raise ConfigError(f"unknown sigma mode {mode!r}")


def permutations_for(vec: Sequence[int], L: int, K: int) -> tuple[JKLPermutation, ...]:
    return tuple(rotation(L, K, v) for v in vec)


# ---------------------------------------------------------------- distributions

def pair_step(p: LabeledPartition, q: LabeledPartition) -> StepFunction:
    return overlay(p.as_step(), q.as_step(), lambda a, b: (a, b))


def pair_distribution(carrier: IntervalSet, p: LabeledPartition, q: LabeledPartition,
                      joined_step: StepFunction | None = None) -> DistributionVector:
    """dist over the carrier of p ∨ q, listing every label pair in product order."""
    total = carrier.measure
    if total == 0:
        raise ValueError("null carrier")
    if joined_step is None:
        joined_step = pair_step(p, q)
    joined = joined_step.restrict(carrier).measure_by_value()
    return DistributionVector((f"{a}|{b}", joined.get((a, b), ZERO) / total)
                              for a in p.labels for b in q.labels)


def full_distribution(p: LabeledPartition) -> DistributionVector:
    return DistributionVector((lab, s.measure) for lab, s in p.atoms)


@dataclass
class DeltaMixingReport:
    ell: int
    gap: Fraction
    joint: DistributionVector
    product: DistributionVector
    delta: Fraction | None = None

    @property
    def within(self) -> bool | None:
        return None if self.delta is None else self.gap < self.delta

    def to_json(self) -> dict:
        return {"ell": self.ell, "gap": frac_str(self.gap),
                "delta": frac_str(self.delta) if self.delta is not None else None, "within": self.within}


def shifted_partition(S: PiecewiseTranslation, ell: int, p: LabeledPartition) -> LabeledPartition:
    """S^{-ℓ}𝒫, pulled back one step at a time so S^ℓ is never formed."""
    h = p.as_step()
    step = S if ell >= 0 else S.inverse()
    for _ in range(abs(ell)):
        h = step.pull(h)
    sets = h.level_sets()
    return LabeledPartition([(lab, sets[lab]) for lab in p.labels if lab in sets], carrier=h.carrier, check=False)


def delta_mixing_report(S: PiecewiseTranslation, ell: int, p: LabeledPartition,
                        delta: Fraction | None = None) -> DeltaMixingReport:
    """Max-metric gap between dist(p ∨ S^{-ℓ}p) and dist(p) × dist(p)."""
    q = shifted_partition(S, ell, p)
    joint = pair_distribution(IntervalSet.full(), p, q)
    base = full_distribution(p)
    prod = base.product(base)
    return DeltaMixingReport(ell, dist_distance(joint, prod), joint, prod, delta)


def window_labels(S: PiecewiseTranslation, p: LabeledPartition, K: int) -> StepFunction:
    """x ↦ (label of S^{-1}x, ..., label of S^{-K}x)."""
    labels = p.as_step()
    inv = S.inverse()
    return stack([inv.power(k).pull(labels) for k in range(1, K + 1)])


def empirical(name: Sequence[str], labels: Sequence[str]) -> DistributionVector:
    n = len(name)
    return DistributionVector((lab, Q(sum(1 for s in name if s == lab), n)) for lab in labels)


def ergodic_good_set(S: PiecewiseTranslation, p: LabeledPartition, K: int, eps: Fraction) -> IntervalSet:
    """Points whose backward K-name along S has label frequencies within eps of dist(p)."""
    ref = full_distribution(p)
    labels = p.labels
    names = window_labels(S, p, K)
    return names.where(lambda nm: dist_distance(empirical(nm, labels), ref) < eps)


# ---------------------------------------------------------------- designated-stage checks

def rigid_offsets(factor: BlockedCocycle) -> list[frozenset[int]]:
    """Per block, the 0-based offsets that are rigid for every cell."""
    out = []
    for q in range(factor.block_count):
        common = None
        for perm in factor.class_sets(q):
            offs = frozenset(w - 1 for w in perm.rigid_block)
            common = offs if common is None else common & offs
        out.append(common or frozenset())
    return out


def is_rigid(t: int, rigid: Sequence[frozenset[int]], L: int, M: int) -> bool:
    if t < 0 or t >= M:
        return False
    q, r = divmod(t, L)
    return r in rigid[q]


@dataclass
class GoodPositions:
    heights: list[int]
    M: int

    @property
    def fraction(self) -> Fraction:
        return Q(len(self.heights), self.M)


def good_positions(p_names: Sequence[str], labels: Sequence[str], rigid: Sequence[frozenset[int]], K: int,
                   L: int, M: int, ell: int, eps: Fraction, reference: DistributionVector) -> GoodPositions:
    """Heights m where both windows m−C_K and m+ℓ−C_K are rigid and have label gap < eps."""
    good = []
    for m in range(M):
        ok = True
        for base in (m, m + ell):
            window = [base - k for k in range(1, K + 1)]
            if not all(is_rigid(t, rigid, L, M) for t in window):
                ok = False
                break
            name = [p_names[t] for t in window]
            if not dist_distance(empirical(name, labels), reference) < eps:
                ok = False
                break
        if ok:
            good.append(m)
    return GoodPositions(good, M)


def old_height(perms: Sequence[JKLPermutation], L: int, m: int) -> int:
    """Height in the old column of the point at new position m."""
    q, r = divmod(m, L)
    return q * L + perms[q].inv(r + 1) - 1




@dataclass
class PositionCheck:
    m: int
    gap: Fraction
    bound: Fraction
    q_measures: dict[tuple[int, int], Fraction]
    q_uniform: bool | None

    @property
    def ok(self) -> bool:
        return self.gap < self.bound


def position_check(cells: Sequence[tuple[IntervalSet, Sequence[JKLPermutation]]], atom_measure: Fraction,
                   p_names: Sequence[str], reference: DistributionVector, K: int, L: int, m: int, ell: int,
                   eps: Fraction, check_uniform: bool = False) -> PositionCheck:
    """Joint law of the labels at new positions m and m+ℓ over the permuted atom, cell by cell.

    Also groups the cells by the pair of translations (k, k') realised at the two positions.
    """
    labels = reference.labels
    masses: dict[tuple[str, str], Fraction] = {}
    qm: dict[tuple[int, int], Fraction] = {}
    for s, perms in cells:
        a = old_height(perms, L, m)
        b = old_height(perms, L, m + ell)
        key = (p_names[a], p_names[b])
        masses[key] = masses.get(key, ZERO) + s.measure / atom_measure
        kk = (m - a, m + ell - b)
        qm[kk] = qm.get(kk, ZERO) + s.measure
    joint = DistributionVector((f"{x}|{y}", masses.get((x, y), ZERO)) for x in labels for y in labels)
    gap = dist_distance(joint, reference.product(reference))
    uniform = None
    if check_uniform:
        target = atom_measure / (K * K)
        keys = {(k, k2) for k in range(1, K + 1) for k2 in range(1, K + 1)}
        uniform = set(qm) == keys and all(v == target for v in qm.values())
    return PositionCheck(m, gap, 2 * eps, qm, uniform)


def setwise_position_gaps(Sn: PiecewiseTranslation, factor: BlockedCocycle, atom: IntervalSet,
                          heights: Iterable[int], p: LabeledPartition, ell: int) -> dict[int, Fraction]:
    """The same gaps computed from the action itself: S_n^m of the permuted atom against p ∨ S_n^{-ℓ}p."""
    wanted = set(heights)
    shifted = shifted_partition(Sn, ell, p)
    ref = full_distribution(p)
    prod = ref.product(ref)
    joined = pair_step(p, shifted)
    carrier = factor.permuted_base(atom)
    out = {}
    for m in range(max(wanted, default=-1) + 1):
        if m in wanted:
            out[m] = dist_distance(pair_distribution(carrier, p, shifted, joined), prod)
        carrier = Sn.apply_set(carrier)
    return out


def q_cells_setwise(Sn: PiecewiseTranslation, R: PiecewiseTranslation, factor: BlockedCocycle,
                    atom: IntervalSet, m: int, ell: int, K: int) -> dict[tuple[int, int], IntervalSet]:
    """Q_{k,k'} inside the permuted atom, located by comparing S_n powers with R powers."""
    phi = factor.permuted_base_map().restrict(atom)
    a_m = Sn.power(m).compose(phi)
    a_ml = Sn.power(m + ell).compose(phi)
    out = {}
    for k in range(1, K + 1):
        hit = a_m.agrees_with(R.power(m - k).restrict(atom))
        for k2 in range(1, K + 1):
            hit2 = a_ml.agrees_with(R.power(m + ell - k2).restrict(atom))
            out[(k, k2)] = phi.apply_set(hit & hit2)
    return out


def p_names_of(atom: NamedAtom) -> tuple[str, ...]:
    return tuple(lab.split("|")[0] for lab in atom.name)


@dataclass
class AtomDiagnostics:
    label: str
    measure: Fraction
    good_fraction: Fraction
    good_bound: Fraction
    positions_checked: int
    max_position_gap: Fraction | None
    position_bound: Fraction
    positions_ok: bool
    q_uniform: bool | None
    column_gap: Fraction
    agreement_min: Fraction
    agreement_bound: Fraction
    setwise_match: bool | None = None

    @property
    def good_ok(self) -> bool:
        return self.good_fraction >= self.good_bound

    @property
    def agreement_ok(self) -> bool:
        return 1 - self.agreement_min <= self.agreement_bound

    def to_json(self) -> dict:
        return {
            "label": self.label, "measure": frac_str(self.measure),
            "good_fraction": frac_str(self.good_fraction), "good_bound": frac_str(self.good_bound),
            "good_ok": self.good_ok, "positions_checked": self.positions_checked,
            "max_position_gap": frac_str(self.max_position_gap) if self.max_position_gap is not None else None,
            "position_bound": frac_str(self.position_bound), "positions_ok": self.positions_ok,
            "q_uniform": self.q_uniform, "column_gap": frac_str(self.column_gap),
            "name_agreement_min": frac_str(self.agreement_min),
            "name_disagreement_bound": frac_str(self.agreement_bound), "name_agreement_ok": self.agreement_ok,
            "setwise_match": self.setwise_match,
        }


@dataclass
class DesignatedReport:
    index: int
    stage: int
    ell: int
    eps: Fraction
    eps_prev: Fraction
    atoms: list[AtomDiagnostics]
    mixing: DeltaMixingReport
    conforming: bool
    green: bool
    exact: bool = True

    @property
    def delta(self) -> Fraction:
        return Q(3, 2 ** self.stage) + 8 * self.eps_prev + 7 * self.eps

    @property
    def chain_bound(self) -> Fraction:
        return 8 * self.eps_prev + 7 * self.eps

    @property
    def max_column_gap(self) -> Fraction:
        return max(a.column_gap for a in self.atoms)

    @property
    def aggregation_ok(self) -> bool:
        return self.mixing.gap <= self.max_column_gap + self.eps

    @property
    def chain_ok(self) -> bool:
        return self.mixing.gap < self.chain_bound

    def failures(self) -> list[str]:
        out = []
        tag = f"designated stage {self.stage}"
        for a in self.atoms:
            # the per-position bound assumes uniformly distributed translations
            if self.exact and not a.positions_ok:
                out.append(f"{tag}, atom {a.label}: good-position gap reached {frac_str(a.max_position_gap)}")
            if a.q_uniform is False:
                out.append(f"{tag}, atom {a.label}: translation pair cells are not equal")
            if a.setwise_match is False:
                out.append(f"{tag}, atom {a.label}: cellwise and setwise gaps differ")
            if self.conforming and self.green and not a.good_ok:
                out.append(f"{tag}, atom {a.label}: good fraction {frac_str(a.good_fraction)} below bound")
            if self.conforming and self.green and not a.agreement_ok:
                out.append(f"{tag}, atom {a.label}: name agreement below bound")
        if not self.aggregation_ok:
            out.append(f"{tag}: global gap exceeds the largest atom gap plus eps")
        if self.green and not self.chain_ok:
            out.append(f"{tag}: global gap {frac_str(self.mixing.gap)} not below {frac_str(self.chain_bound)}")
        return out

    def to_json(self) -> dict:
        return {
            "index": self.index, "stage": self.stage, "ell": self.ell, "epsilon": frac_str(self.eps),
            "epsilon_prev": frac_str(self.eps_prev), "conforming": self.conforming, "green": self.green, "exact_uniform": self.exact,
            "mixing_gap": frac_str(self.mixing.gap), "chain_bound": frac_str(self.chain_bound),
            "chain_ok": self.chain_ok, "delta": frac_str(self.delta), "delta_vacuous": self.delta >= 1,
            "max_atom_column_gap": frac_str(self.max_column_gap), "aggregation_ok": self.aggregation_ok,
            "atoms": [a.to_json() for a in self.atoms],
        }


def designated_diagnostics(index: int, stage: int, R: PiecewiseTranslation, Sn: PiecewiseTranslation,
                           S_prev: PiecewiseTranslation, factor: BlockedCocycle,
                           atoms: Sequence[tuple[str, NamedAtom]],
                           p: LabeledPartition, eps: Fraction, eps_prev: Fraction, exact: bool,
                           conforming: bool, green: bool, setwise: bool = False) -> DesignatedReport:
    tower = factor.tower
    K, L, M = factor.K, factor.L, factor.height
    ell = L
    ref = full_distribution(p)
    prod = ref.product(ref)
    rigid = rigid_offsets(factor)
    shifted = shifted_partition(Sn, ell, p)
    joined = pair_step(p, shifted)
    if S_prev is R or S_prev == R:
        agree = IntervalSet.full()
    else:
        w_r = window_labels(R, p, K)
        w_p = window_labels(S_prev, p, K)
        agree = overlay(w_r, w_p, lambda a, b: a == b).level_set(True)
    agree_pieces = _fraction_in(tower.columns[:M], tower.base, agree)
    out = []
    for label, atom in atoms:
        names = p_names_of(atom)
        gp = good_positions(names, ref.labels, rigid, K, L, M, ell, eps, ref)
        cells = [(factor_cell & atom.set, perms) for factor_cell, perms in factor.cells
                 if (factor_cell & atom.set).measure > 0]
        mu = atom.set.measure
        checks = [position_check(cells, mu, names, ref, K, L, m, ell, eps, check_uniform=exact) for m in gp.heights]
        max_gap = max((c.gap for c in checks), default=None)
        q_uniform = all(c.q_uniform for c in checks) if exact and checks else None
        setwise_match = None
        if setwise and gp.heights:
            sw = setwise_position_gaps(Sn, factor, atom.set, gp.heights, p, ell)
            setwise_match = all(sw[c.m] == c.gap for c in checks)
        column = IntervalSet.union_all(tower.transport(atom.set, t) for t in range(M))
        column_gap = dist_distance(pair_distribution(column, p, shifted, joined), prod)
        fr = [f for piece, f in agree_pieces if (piece & atom.set).measure > 0]
        out.append(AtomDiagnostics(
            label=label, measure=mu, good_fraction=gp.fraction, good_bound=1 - (8 * eps_prev + 4 * eps),
            positions_checked=len(checks), max_position_gap=max_gap, position_bound=2 * eps,
            positions_ok=all(c.ok for c in checks), q_uniform=q_uniform, column_gap=column_gap,
            agreement_min=min(fr), agreement_bound=4 * eps_prev, setwise_match=setwise_match))
    mixing = delta_mixing_report(Sn, ell, p)
    rep = DesignatedReport(index, stage, ell, eps, eps_prev, out, mixing, conforming, green, exact)
    mixing.delta = rep.delta
    return rep


# ---------------------------------------------------------------- driver

@dataclass
class WeakMixConfig:
    depth: int = 10
    radix: int = 2
    c: int = 1
    K1: int = 2
    stages: int = 1
    sigma: str = "exact-uniform"
    sigma_modes: list[str] | None = None
    seed: int = 0
    cell_budget: int = 1 << 12
    iid_cells: int = 32
    granularity: str = "pow2"
    M_cap: int = 1 << 12
    L: list[int] | None = None
    M: list[int] | None = None
    epsilons: list[Fraction] | None = None
    lookahead: int = 3
    ells: list[int] = field(default_factory=lambda: [1])
    partition_sizes: list[int] | None = None
    setwise: bool = False
    check_route: bool = False

    def eps(self, n: int) -> Fraction:
        if n == 0:
            return ZERO
        if self.epsilons is not None and n <= len(self.epsilons):
            return frac(self.epsilons[n - 1])
        return epsilon(n, self.c)

    def K(self, n: int) -> int:
        return self.K1 + n - 1

    def partition_size(self, i: int) -> int:
        if self.partition_sizes:
            return self.partition_sizes[min(i, len(self.partition_sizes)) - 1]
        return self.radix ** i

    def partition(self, i: int) -> LabeledPartition:
        return LabeledPartition.equipartition(self.partition_size(i))

    def sigma_mode(self, n: int) -> str:
        if self.sigma_modes is not None and n <= len(self.sigma_modes):
            return self.sigma_modes[n - 1]
        return self.sigma

    def validate(self) -> None:
        horizon = self.stages + self.lookahead + 1
        prev = None
        for n in range(1, horizon + 1):
            e = self.eps(n)
            if not (0 < e < Q(1, 2 ** n)):
                raise ConfigError(f"schedule invariant eps_n < 2^-n fails at n={n} (eps_n = {frac_str(e)})")
            if prev is not None and not e < prev:
                raise ConfigError(f"eps_n must strictly decrease; fails at n={n}")
            prev = e
        if self.K1 < 1:
            raise ConfigError("K1 must be positive")
        if self.partition_sizes is not None:
            sizes = self.partition_sizes
            if not sizes or any(k < 1 for k in sizes):
                raise ConfigError("partition sizes must be positive")
            if any(b % a for a, b in zip(sizes, sizes[1:])):
                raise ConfigError("each partition size must divide the next so the partitions refine")
        if self.sigma not in ("exact-uniform", "seeded-iid"):
            raise ConfigError(f"unknown sigma mode {self.sigma!r}")
        for lst, name in ((self.L, "L"), (self.M, "M")):
            if lst is not None and any(v < 1 for v in lst):
                raise ConfigError(f"{name} entries must be positive")


@dataclass
class DisagreementEntry:
    stage: int
    reference: int
    ell: int
    measure: Fraction
    bound: Fraction

    @property
    def ok(self) -> bool:
        return self.measure <= self.bound

    def to_json(self) -> dict:
        return {"stage": self.stage, "reference_stage": self.reference, "ell": self.ell,
                "disagreement": frac_str(self.measure), "bound": frac_str(self.bound), "ok": self.ok}


@dataclass
class StageReport:
    n: int
    case: int
    designated_index: int | None
    params: StageParameters
    conditions: ConditionsReport
    sigma: dict
    atoms: int
    action_pieces: int
    exceptional_measure: Fraction | None
    disagreements: list[DisagreementEntry]
    designated: DesignatedReport | None = None

    def failures(self) -> list[str]:
        out = [f"stage {e.stage}: disagreement with stage {e.reference} at ell={e.ell} exceeds the bound"
               for e in self.disagreements if not e.ok]
        if self.designated is not None:
            out.extend(self.designated.failures())
        return out

    def to_json(self) -> dict:
        return {
            "stage": self.n, "case": self.case, "designated_index": self.designated_index,
            "parameters": self.params.to_json(), "tower_conditions": self.conditions.to_json(),
            "sigma": self.sigma, "atoms": self.atoms, "action_pieces": self.action_pieces,
            "exceptional_measure": frac_str(self.exceptional_measure)
            if self.exceptional_measure is not None else None,
            "disagreements": [e.to_json() for e in self.disagreements],
            "designated": self.designated.to_json() if self.designated else None,
            "failures": self.failures(),
        }


@dataclass
class ConstructionResult:
    config: WeakMixConfig
    base: dict
    stages: list[StageReport]
    designated: list[int]
    persistence: list[dict]
    aborted: str | None = None
    cocycle: StageCocycle | None = None

    def failures(self) -> list[str]:
        out = [f for s in self.stages for f in s.failures()]
        out.extend(p["message"] for p in self.persistence if p.get("hard") and not p["ok"])
        return out

    def to_json(self) -> dict:
        return {"base": self.base, "stages": [s.to_json() for s in self.stages],
                "designated_stages": self.designated, "persistence": self.persistence,
                "aborted": self.aborted, "failures": self.failures()}


def chain_base(system: RankOneSystem, factors: Sequence[BlockedCocycle], M: int) -> IntervalSet | None:
    """Canonical base of height M pushed through each stage's permuted-base map."""
    cb = system.canonical_base(M)
    for f in factors:
        if M % f.height or not cb.issubset(f.tower.base):
            return None
        cb = f.permuted_base(cb)
    return cb


def _o_partition(O: IntervalSet) -> LabeledPartition:
    parts = [(lab, s) for lab, s in (("O", O), ("N", O.complement())) if s]
    return LabeledPartition(parts, check=False)


def _lookahead(cfg: WeakMixConfig, S_ref: PiecewiseTranslation, j_next: int, start: int,
               ) -> tuple[int | None, IntervalSet | None]:
    p = cfg.partition(j_next)
    for n in range(start, start + cfg.lookahead):
        e = cfg.eps(n)
        E = ergodic_good_set(S_ref, p, cfg.K(n), e)
        if 1 - E.measure < e:
            return n, E
    return None, None


def run_construction(cfg: WeakMixConfig) -> ConstructionResult:
    cfg.validate()
    system = odometer_system(cfg.depth, cfg.radix)
    S = system.map
    stage = StageCocycle(S)
    base_info = {"system": f"odometer radix {cfg.radix} depth {cfg.depth}", "pieces": len(S),
                 "bijection": S.is_bijection()}
    result = ConstructionResult(cfg, base_info, [], [], [], cocycle=stage)
    if cfg.stages == 0:
        return result
    designated = [0]  # n_0 = 0 stands for the base action
    E1 = ergodic_good_set(S, cfg.partition(1), cfg.K(1), cfg.eps(1))
    next_des, next_E = 1, E1
    base_info["first_window_exceptional_measure"] = frac_str(1 - E1.measure)
    prev_L: list[int] = []
    prev_M: int | None = None
    for n in range(1, cfg.stages + 1):
        j = len(designated) - 1
        n_j = designated[-1]
        case = 1 if n == next_des else 2
        K = cfg.K(n)
        K_star = K if case == 1 else (cfg.K(next_des) if next_des is not None else K)
        eps = cfg.eps(n)
        try:
            params = schedule_next(n, case, K, K_star, eps, prev_L, prev_M, cfg.granularity, cfg.M_cap,
                                   L=cfg.L[n - 1] if cfg.L and n <= len(cfg.L) else None,
                                   M=cfg.M[n - 1] if cfg.M and n <= len(cfg.M) else None)
        except ScaleCapError as exc:
            result.aborted = f"stage {n}: {exc}"
            return result
        L, M = params.L, params.M
        if M % L:
            result.aborted = f"stage {n}: block length {L} does not divide tower height {M}"
            return result
        R = stage.action()
        S_nj = stage.action(n_j)
        O = S_nj.agrees_with(R) if n_j != n - 1 else IntervalSet.full()
        p_index = j + 1 if case == 1 else max(j, 1)
        joinP = cfg.partition(p_index).join(_o_partition(O))
        cands = [c for c in (chain_base(system, stage.factors, M), system.canonical_base(M)) if c is not None]
        try:
            tower, _ = search_strong_tower(R, M, eps / (K_star * K_star), block_length=L, candidates=cands)
        except SearchExhaustedError as exc:
            result.aborted = f"stage {n}: {exc}"
            return result
        atoms = [(f"A{i + 1}", a) for i, a in enumerate(pure_atoms(tower, joinP))]
        conds = evaluate_conditions(
            tower, eps / (K_star * K_star), [(lab, a.set) for lab, a in atoms],
            good_set=next_E if case == 1 else None, good_threshold=1 - eps if case == 1 else None,
            aux_set=O if case == 1 else None, aux_tolerance=eps / K if case == 1 else None)
        mode = cfg.sigma_mode(n)
        try:
            sigma = assign_sigma([(lab, a.set) for lab, a in atoms], K, M // L, mode, seed=cfg.seed + n,
                                 budget=cfg.cell_budget, iid_cells=cfg.iid_cells)
        except BudgetError as exc:
            result.aborted = f"stage {n}: {exc}"
            return result
        E_used = next_E if case == 1 else None
        cells = [(s, permutations_for(v, L, K)) for _, s, v in sigma.cells]
        factor = BlockedCocycle(n, tower, K, L, eps, cells)
        Sn = stage.push(factor, check_route=cfg.check_route)
        # disagreement with the last designated action, per requested shift
        ref_stage = n_j
        K_next = cfg.K(n) if case == 1 else K_star
        ells = list(dict.fromkeys(list(cfg.ells) + ([prev_L[n_j - 1]] if n_j >= 1 else [])))
        entries = []
        for ell in ells:
            dis = 1 - power_agreement(Sn, stage.action(ref_stage), ell).measure
            bound = ZERO
            for i in range(ref_stage + 1, n + 1):
                Li = prev_L[i - 1] if i <= len(prev_L) else L
                bound += cfg.eps(i) / (K_next * K_next) + Q(cfg.K(i), Li) + Q(abs(ell), Li)
            entries.append(DisagreementEntry(n, ref_stage, ell, dis, bound))
        des_report = None
        des_index = None
        if case == 1:
            des_index = j + 1
            des_report = designated_diagnostics(
                des_index, n, R, Sn, stage.action(n_j), factor, atoms, cfg.partition(des_index), eps,
                cfg.eps(n_j), exact=(mode == "exact-uniform"), conforming=params.conforming,
                green=conds.all_ok, setwise=cfg.setwise)
            designated.append(n)
            next_des, next_E = _lookahead(cfg, Sn, des_index + 1, n + 1)
        result.stages.append(StageReport(
            n, case, des_index, params, conds, sigma.summary(), len(atoms), len(Sn),
            1 - E_used.measure if E_used is not None else None, entries, des_report))
        prev_L.append(L)
        prev_M = M
    result.designated = designated[1:]
    for a in result.stages:
        if a.designated is None:
            continue
        for b in result.stages:
            if b.designated is None or b.n <= a.n:
                continue
            rep = delta_mixing_report(stage.action(b.n), a.designated.ell, cfg.partition(a.designated.index),
                                      a.designated.delta)
            hard = a.designated.green and b.designated.green and a.params.conforming and b.params.conforming
            result.persistence.append({
                "from_stage": a.n, "at_stage": b.n, "ell": rep.ell, "gap": frac_str(rep.gap),
                "delta": frac_str(rep.delta), "ok": bool(rep.within), "hard": hard,
                "message": None if rep.within else
                f"stage {b.n} is not delta-mixing relative to the parameters of stage {a.n}"})
    return result
