"""Shannon entropy of partitions with certified enclosures, cocycle partitions and the
finite-entropy criterion that splits each cocycle partition by fixed stage."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import mpmath
from mpmath.ctx_iv import MPIntervalContext
from mpmath.libmp import to_rational

from .blockcode import StageCocycle, fixed_stage_sets
from .ratset import Q, ZERO, DistributionVector, IntervalSet, LabeledPartition, frac, frac_str

DEFAULT_DIGITS = 50


def _ctx(digits: int) -> MPIntervalContext:
    c = MPIntervalContext()
    c.dps = digits + 10
    return c


@lru_cache(maxsize=None)
def _ctx_cached(digits: int) -> MPIntervalContext:
    return _ctx(digits)


def _endpoints(v) -> tuple[Fraction, Fraction]:
    a, b = v._mpi_
    pa, qa = to_rational(a)
    pb, qb = to_rational(b)
    return Q(pa, qa), Q(pb, qb)


@lru_cache(maxsize=4096)
def log_bounds(q: Fraction, digits: int = DEFAULT_DIGITS) -> tuple[Fraction, Fraction]:
    """Rational lo ≤ log(q) ≤ hi from outward-rounded interval evaluation."""
    if q <= 0:
        raise ValueError("log of a nonpositive number")
    if q == 1:
        return ZERO, ZERO
    c = _ctx_cached(digits)
    v = c.log(c.mpf(q.numerator) / c.mpf(q.denominator))
    return _endpoints(v)


@dataclass(frozen=True)
class CertifiedReal:
    """A real number known to lie in [lo, hi]; both endpoints exact rationals."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        object.__setattr__(self, "lo", frac(self.lo))
        object.__setattr__(self, "hi", frac(self.hi))

    @staticmethod
    def exact(q) -> CertifiedReal:
        q = frac(q)
        return CertifiedReal(q, q)

    def __add__(self, other: CertifiedReal) -> CertifiedReal:
        return CertifiedReal(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: CertifiedReal) -> CertifiedReal:
        return CertifiedReal(self.lo - other.hi, self.hi - other.lo)

    def scale(self, q: Fraction) -> CertifiedReal:
        if q >= 0:
            return CertifiedReal(self.lo * q, self.hi * q)
        return CertifiedReal(self.hi * q, self.lo * q)

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def radius(self) -> Fraction:
        return (self.hi - self.lo) / 2

    def certainly_le(self, other: CertifiedReal) -> bool:
        return self.hi <= other.lo

    def certainly_lt(self, other: CertifiedReal) -> bool:
        return self.hi < other.lo

    def decimal(self, digits: int = DEFAULT_DIGITS) -> str:
        with mpmath.workdps(digits + 5):
            return mpmath.nstr(mpmath.mpf(self.mid.numerator) / self.mid.denominator, digits)

    def radius_str(self) -> str:
        with mpmath.workdps(10):
            return mpmath.nstr(mpmath.mpf(self.radius.numerator) / self.radius.denominator, 3)

    def __str__(self) -> str:
        return f"{self.decimal()} ± {self.radius_str()}"

    def to_json(self) -> dict:
        return {"value": self.decimal(), "radius": self.radius_str()}


def log_certified(q: Fraction, digits: int = DEFAULT_DIGITS) -> CertifiedReal:
    return CertifiedReal(*log_bounds(frac(q), digits))


def term(mass: Fraction, size: int = 1, digits: int = DEFAULT_DIGITS) -> CertifiedReal:
    """−m·log(m/s), with 0·log 0 = 0."""
    mass = frac(mass)
    if mass == 0:
        return CertifiedReal.exact(0)
    return log_certified(mass / size, digits).scale(-mass)


def shannon_entropy(p: LabeledPartition | DistributionVector | Iterable[Fraction],
                    digits: int = DEFAULT_DIGITS) -> CertifiedReal:
    if isinstance(p, LabeledPartition):
        masses = [s.measure for _, s in p.atoms]
    elif isinstance(p, DistributionVector):
        masses = list(p.masses)
    else:
        masses = [frac(m) for m in p]
    if any(m < 0 or m > 1 for m in masses):
        raise ValueError("masses must lie in [0, 1]")
    total = CertifiedReal.exact(0)
    for m in masses:
        total = total + term(m, 1, digits)
    return total


@dataclass
class CocyclePartition:
    k: int
    partition: LabeledPartition
    residual: Fraction
    horizon: int


def cocycle_partition(stage: StageCocycle, k: int, through: int | None = None, horizon: int = 0,
                      inverse: bool = False) -> CocyclePartition:
    """Atoms {x : value(x, k) = h} over points whose value is settled by stage `through`."""
    through = stage.depth if through is None else through
    if stage.depth == 0:
        full = IntervalSet.full()
        return CocyclePartition(k, LabeledPartition([(str(k), full)]), ZERO, 0)
    rep = fixed_stage_sets(stage, k, through, horizon, inverse=inverse)
    settled = IntervalSet.union_all(rep.sets.values())
    value = (stage.alpha_inverse_step if inverse else stage.alpha_step)(rep.horizon, k)
    atoms = [(str(h), s) for h, s in sorted(value.restrict(settled).level_sets().items())]
    return CocyclePartition(k, LabeledPartition(atoms, carrier=settled, check=False),
                            1 - settled.measure, rep.horizon)


@dataclass
class EntropyLedger:
    groups: list[tuple[int, Fraction, int]] = field(default_factory=list)
    digits: int = DEFAULT_DIGITS

    def add(self, n: int, mass: Fraction, size: int) -> None:
        if size < 1:
            raise ValueError("group sizes are positive")
        self.groups.append((n, frac(mass), size))

    def total_mass(self) -> Fraction:
        return sum((m for _, m, _ in self.groups), ZERO)

    def terms(self) -> list[CertifiedReal]:
        return [term(m, s, self.digits) for _, m, s in self.groups]

    def partial_sums(self) -> list[CertifiedReal]:
        out = []
        acc = CertifiedReal.exact(0)
        for t in self.terms():
            acc = acc + t
            out.append(acc)
        return out

    def total(self) -> CertifiedReal:
        sums = self.partial_sums()
        return sums[-1] if sums else CertifiedReal.exact(0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "mass", "size", "term", "term_radius", "cumulative", "cumulative_radius"])
        for (n, m, s), t, c in zip(self.groups, self.terms(), self.partial_sums()):
            w.writerow([n, frac_str(m), s, t.decimal(30), t.radius_str(), c.decimal(30), c.radius_str()])
        return buf.getvalue()


def ledger_from_stages(stage: StageCocycle, k: int, through: int, horizon: int = 0, inverse: bool = False,
                       size_factor: int = 1) -> tuple[EntropyLedger, CocyclePartition]:
    """Group n collects D_n^k with |F_n| = number of distinct values seen on it (times size_factor)."""
    rep = fixed_stage_sets(stage, k, through, horizon, inverse=inverse)
    value = (stage.alpha_inverse_step if inverse else stage.alpha_step)(rep.horizon, k)
    ledger = EntropyLedger()
    for n, s in sorted(rep.sets.items()):
        if s.measure == 0:
            continue
        distinct = len(value.restrict(s).values())
        ledger.add(n, s.measure, distinct * size_factor)
    settled = IntervalSet.union_all(rep.sets.values())
    atoms = [(str(h), a) for h, a in sorted(value.restrict(settled).level_sets().items())]
    cp = CocyclePartition(k, LabeledPartition(atoms, carrier=settled, check=False),
                          1 - settled.measure, rep.horizon)
    return ledger, cp


@dataclass(frozen=True)
class TailSchedule:
    """Mass bound c·2^(−a·n) and size bound mult·2^(n^b) for stages n > start."""

    c: Fraction = Q(1)
    a: Fraction = Q(1, 2)
    b: int = 2
    mult: int = 1
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "c", frac(self.c))
        object.__setattr__(self, "a", frac(self.a))

    def mass_bound_ok(self, n: int, mass: Fraction) -> bool:
        # mass ≤ c·2^(−a n) ⇔ (mass/c)^q ≤ 2^(−p n) with a = p/q, compared exactly
        p, q = self.a.numerator, self.a.denominator
        r = mass / self.c
        return r ** q * 2 ** (p * n) <= 1

    def size_bound_ok(self, n: int, size: int) -> bool:
        return size <= self.mult * 2 ** (n ** self.b)


@dataclass
class EntropyCheck:
    built_entropy: CertifiedReal
    built_bound: CertifiedReal
    refinement_ok: bool
    refinement_exact: bool
    schedule_violations: list[str]
    majorant: CertifiedReal | None
    tail_certified: bool
    verdict: str

    def to_json(self) -> dict:
        return {
            "built_entropy": self.built_entropy.to_json(),
            "built_bound": self.built_bound.to_json(),
            "refinement_ok": self.refinement_ok,
            "refinement_exact_fallback": self.refinement_exact,
            "schedule_violations": self.schedule_violations,
            "tail_majorant": self.majorant.to_json() if self.majorant else None,
            "tail_certified": self.tail_certified,
            "verdict": self.verdict,
        }


def _exact_le(masses: Sequence[Fraction], groups: Sequence[tuple[Fraction, int]], max_exp: int = 4096) -> bool | None:
    """Exact test of Σ −p log p ≤ Σ −m log(m/s) by exponentiation, when exponents stay small."""
    denom = 1
    for v in list(masses) + [m for m, _ in groups]:
        denom = math.lcm(denom, v.denominator)
        if denom > max_exp:
            return None
    # H ≤ G  ⇔  Π p^{p} ≥ Π (m/s)^{m}  ⇔  Π p^{D p} ≥ Π (m/s)^{D m}
    lhs = Q(1)
    for p in masses:
        if p:
            lhs *= p ** int(p * denom)
    rhs = Q(1)
    for m, s in groups:
        if m:
            rhs *= (m / s) ** int(m * denom)
    return lhs >= rhs


def tail_majorant(sched: TailSchedule, digits: int = DEFAULT_DIGITS, extra: int = 400,
                  ) -> tuple[CertifiedReal, bool]:
    """Upper enclosure of Σ_{n>start} B_n·log(S_n/B_n) with B_n = c·2^(−a n), S_n = mult·2^(n^b).

    Returns the enclosure and whether convergence plus termwise domination were certified.
    """
    start = sched.start
    log2 = log_certified(Q(2), digits)
    logc = log_certified(sched.c, digits)
    logm = log_certified(Q(sched.mult), digits)
    total = CertifiedReal.exact(0)
    last = start + extra
    ok = True
    e_upper = Q(2719, 1000)
    for n in range(start + 1, last + 1):
        bn = _mass_bound_upper(sched, n)
        # capping the exponent keeps the comparison cheap; a capped size is still a lower bound of S
        size = sched.mult * Q(2) ** min(n ** sched.b, 4096)
        if bn * e_upper <= size:
            # x ↦ −x log(x/S) increases on [0, S/e], so the bound mass gives the worst term
            # −B log(B/S) = B (n^b log 2 + log mult − log c + a n log 2)
            inner = log2.scale(Q(n ** sched.b) + sched.a * n) + logm - logc
            total = total + inner.scale(bn)
        else:
            # past S/e the term is at most its maximum S/e
            total = total + CertifiedReal.exact(size * Q(3679, 10000))
    # ratio test bound for n > last: term_{n+1}/term_n ≤ ρ
    a = sched.a
    n0 = last

    def poly(n: int) -> Fraction:
        return Q(n ** sched.b) + a * n

    ratio_poly = poly(n0 + 1) / poly(n0)
    two_a_upper = _two_pow_neg_upper(a, digits)
    rho = two_a_upper * ratio_poly
    if rho >= 1:
        return CertifiedReal(total.lo, total.hi), False
    bn = _mass_bound_upper(sched, n0 + 1)
    first = bn * (poly(n0 + 1) * log2.hi + max(logm.hi - logc.lo, ZERO))
    tail = first / (1 - rho)
    return CertifiedReal(total.lo, total.hi + tail), ok


def _mass_bound_upper(sched: TailSchedule, n: int) -> Fraction:
    """A rational upper bound of c·2^(−a n)."""
    if sched.a.denominator == 1:
        return sched.c / Q(2) ** (sched.a.numerator * n)
    lo, _ = _two_pow_bounds(sched.a * n)
    return sched.c / lo


@lru_cache(maxsize=None)
def _two_pow_bounds(x: Fraction, digits: int = DEFAULT_DIGITS) -> tuple[Fraction, Fraction]:
    c = _ctx_cached(digits)
    v = c.mpf(2) ** (c.mpf(x.numerator) / c.mpf(x.denominator))
    return _endpoints(v)


def _two_pow_neg_upper(a: Fraction, digits: int) -> Fraction:
    lo, _ = _two_pow_bounds(a, digits)
    return 1 / lo


def entropy_check(ledger: EntropyLedger, partition_masses: Sequence[Fraction], sched: TailSchedule,
                 digits: int = DEFAULT_DIGITS) -> EntropyCheck:
    """(a) entropy of the settled cocycle partition against the grouped bound on built stages;
    (b) a certified finite majorant for the unbuilt tail under the schedule."""
    built_h = shannon_entropy(list(partition_masses), digits)
    bound = ledger.total()
    exact_used = False
    if built_h.certainly_le(bound):
        ok = True
    else:
        res = _exact_le(list(partition_masses), [(m, s) for _, m, s in ledger.groups])
        exact_used = res is not None
        ok = bool(res)
    violations = []
    for n, m, s in ledger.groups:
        if n > sched.start:
            if not sched.mass_bound_ok(n, m):
                violations.append(f"stage {n}: mass {frac_str(m)} exceeds c·2^(-a·n)")
            if not sched.size_bound_ok(n, s):
                violations.append(f"stage {n}: group size {s} exceeds mult·2^(n^b)")
    maj, tail_ok = tail_majorant(sched, digits)
    if violations:
        verdict = "schedule-violation"
    elif not ok:
        verdict = "refinement-failure" if exact_used or bound.certainly_lt(built_h) else "inconclusive"
    elif not tail_ok:
        verdict = "inconclusive"
    else:
        verdict = "finite"
    return EntropyCheck(built_h, bound, ok, exact_used, violations, maj, tail_ok, verdict)
