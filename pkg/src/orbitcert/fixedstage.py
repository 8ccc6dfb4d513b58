"""Fixed-stage pipeline: build blocked stages on a geometric schedule, measure the sets where
each cocycle value settles, compare them with the closed-form tails and feed the grouped
entropy ledger."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .blockcode import (BlockedCocycle, BoundVerdict, GeometricSchedule, StageCocycle, fixed_stage_bound_check,
                        fixed_stage_sets)
from .dynamics import ConfigError, odometer_system
from .entropy import EntropyCheck, TailSchedule, entropy_check, ledger_from_stages
from .ratset import frac, frac_str
from .towers import SearchExhaustedError, search_strong_tower
from .weakmix import BudgetError, assign_sigma, chain_base, permutations_for


@dataclass
class FixedStageConfig:
    depth: int = 8
    radix: int = 2
    stages: int = 3
    eps_scale: Fraction = Fraction(1)
    eps_ratio: Fraction = Fraction(1, 2)
    L1: int = 4
    L_ratio: int = 2
    K1: int = 1
    blocks: list[int] = field(default_factory=lambda: [4, 4, 4])
    sigma: str = "seeded-iid"
    seed: int = 0
    iid_cells: int = 8
    cell_budget: int = 1 << 12
    ks: list[int] = field(default_factory=lambda: [1, -1, 3])
    horizon: int = 0
    # tail schedule for the grouped entropy bound: mass c·2^(−a n), size mult·2^(n^b)
    tail_c: Fraction = Fraction(16)
    tail_a: Fraction = Fraction(1)
    tail_b: int = 3
    tail_mult: int = 1

    def schedule(self) -> GeometricSchedule:
        return GeometricSchedule(frac(self.eps_scale), frac(self.eps_ratio), self.L1, self.L_ratio, self.K1)

    def tail(self) -> TailSchedule:
        # the schedule governs the unbuilt stages only
        return TailSchedule(c=self.tail_c, a=self.tail_a, b=self.tail_b, mult=self.tail_mult, start=self.stages)

    def M(self, n: int) -> int:
        b = self.blocks[min(n, len(self.blocks)) - 1]
        return self.schedule().L(n) * b

    def validate(self) -> None:
        if not self.blocks or any(b < 1 for b in self.blocks):
            raise ConfigError("blocks entries must be positive")
        if not 0 < frac(self.eps_ratio) < 1:
            raise ConfigError("eps_ratio must lie in (0, 1)")
        if self.L_ratio < 2:
            raise ConfigError("L_ratio must be at least 2 for closed-form tails")
        sched = self.schedule()
        for n in range(1, self.stages + 1):
            if not 0 < sched.eps(n) <= Fraction(1, 2 ** n):
                raise ConfigError(f"schedule invariant eps_n <= 2^-n fails at n={n}")
            if sched.L(n) <= sched.K(n):
                raise ConfigError(f"block length L_{n} = {sched.L(n)} must exceed K_{n} = {sched.K(n)}")
            if self.M(n) > self.radix ** self.depth:
                raise ConfigError(f"tower height {self.M(n)} at stage {n} exceeds the odometer resolution")


@dataclass
class FixedStageResult:
    config: FixedStageConfig
    stages: list[dict]
    verdicts: list[BoundVerdict]
    reports: list[dict]
    entropy: dict[str, EntropyCheck]
    ledgers: dict[str, str]
    aborted: str | None = None

    def failures(self) -> list[str]:
        out = [f"{v.bound} n={v.n} k={v.k}: measure {frac_str(v.measure)} vs {frac_str(v.rhs_lower)}"
               for v in self.verdicts if v.verdict == "fail"]
        out += [f"entropy k={k}: {r.verdict}" for k, r in self.entropy.items()
                if r.verdict in ("refinement-failure", "schedule-violation")]
        return out

    def inconclusive(self) -> list[str]:
        out = [f"{v.bound} n={v.n} k={v.k}" for v in self.verdicts if v.verdict == "inconclusive"]
        out += [f"entropy k={k}" for k, r in self.entropy.items() if r.verdict == "inconclusive"]
        return out

    def to_json(self) -> dict:
        return {
            "stages": self.stages,
            "fixed_stage_sets": self.reports,
            "bound_checks": [v.to_json() for v in self.verdicts],
            "entropy": {k: r.to_json() for k, r in self.entropy.items()},
            "aborted": self.aborted,
            "failures": self.failures(),
            "inconclusive": self.inconclusive(),
        }


def build_stages(cfg: FixedStageConfig) -> tuple[StageCocycle, list[dict]]:
    """Push `cfg.stages` blocked factors onto the odometer. Raises on tower or budget failure."""
    system = odometer_system(cfg.depth, cfg.radix)
    stage = StageCocycle(system.map)
    sched = cfg.schedule()
    info = []
    for n in range(1, cfg.stages + 1):
        K, L, M, eps = sched.K(n), sched.L(n), cfg.M(n), sched.eps(n)
        R = stage.action()
        cands = [c for c in (chain_base(system, stage.factors, M), system.canonical_base(M)) if c is not None]
        tower, _ = search_strong_tower(R, M, eps, block_length=L, candidates=cands)
        sigma = assign_sigma([("base", tower.base)], K, M // L, cfg.sigma, seed=cfg.seed + n,
                             budget=cfg.cell_budget, iid_cells=cfg.iid_cells)
        cells = [(s, permutations_for(v, L, K)) for _, s, v in sigma.cells]
        stage.push(BlockedCocycle(n, tower, K, L, eps, cells))
        info.append({"n": n, "K": K, "L": L, "M": M, "epsilon": frac_str(eps),
                     "tower_epsilon": frac_str(tower.achieved_epsilon), "sigma": sigma.summary()})
    return stage, info


def run_fixed_stage(cfg: FixedStageConfig) -> FixedStageResult:
    cfg.validate()
    sched = cfg.schedule()
    try:
        stage, info = build_stages(cfg)
    except (SearchExhaustedError, BudgetError) as exc:
        return FixedStageResult(cfg, [], [], [], {}, {}, aborted=str(exc))
    verdicts: list[BoundVerdict] = []
    reports = []
    entropy: dict[str, EntropyCheck] = {}
    ledgers: dict[str, str] = {}
    through = cfg.stages
    checked = range(2, through + 1)
    for k in cfg.ks:
        d = fixed_stage_sets(stage, k, through, cfg.horizon)
        e = fixed_stage_sets(stage, k, through, cfg.horizon, inverse=True)
        reports += [d.to_json(), e.to_json()]
        verdicts += fixed_stage_bound_check(d, e, sched, checked)
        for inverse, tag in ((False, f"alpha_{k}"), (True, f"beta_{k}")):
            ledger, cp = ledger_from_stages(stage, k, through, cfg.horizon, inverse=inverse)
            masses = [s.measure for _, s in cp.partition.atoms]
            entropy[tag] = entropy_check(ledger, masses, cfg.tail())
            ledgers[tag] = ledger.to_csv()
    return FixedStageResult(cfg, info, verdicts, reports, entropy, ledgers)
