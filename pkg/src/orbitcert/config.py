"""Run configuration: TOML (or JSON) files validated into one typed object before anything runs."""

from __future__ import annotations

import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dynamics import ConfigError
from .fixedstage import FixedStageConfig
from .ratset import Q
from .weakmix import WeakMixConfig
from .ztile import ZTileConfig

SIGMA_ALIASES = {"exact": "exact-uniform", "iid": "seeded-iid",
                 "exact-uniform": "exact-uniform", "seeded-iid": "seeded-iid"}


def parse_rational(v: Any) -> Fraction:
    """Accept ints, "p/q" strings and decimal strings; floats are rejected as inexact."""
    if isinstance(v, bool):
        raise ValueError("expected a rational, got a boolean")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        try:
            return Fraction(v.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a rational: {v!r}") from exc
    raise ValueError(f"rationals must be given as integers or strings like \"1/8\", got {v!r}")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BaseSection(_Section):
    kind: Literal["odometer"] = "odometer"
    radix: int = Field(2, ge=2)
    depth: int = Field(8, ge=1, le=24)


class ScheduleSection(_Section):
    stages: int = Field(2, ge=0)
    c: int = Field(1, ge=1)
    K1: int = Field(2, ge=1)
    epsilons: Optional[list[Fraction]] = None
    L: Optional[list[int]] = None
    M: Optional[list[int]] = None
    partition_sizes: Optional[list[int]] = None
    ells: list[int] = Field(default_factory=lambda: [1])
    lookahead: int = Field(3, ge=1)
    granularity: Literal["pow2", "exact"] = "pow2"
    # geometric schedule for the fixed-stage pipeline
    eps_scale: Fraction = Fraction(1)
    eps_ratio: Fraction = Fraction(1, 2)
    L1: int = Field(4, ge=2)
    L_ratio: int = Field(2, ge=2)
    blocks: list[int] = Field(default_factory=lambda: [4])

    @field_validator("epsilons", mode="before")
    @classmethod
    def _eps(cls, v):
        return None if v is None else [parse_rational(x) for x in v]

    @field_validator("eps_scale", "eps_ratio", mode="before")
    @classmethod
    def _rat(cls, v):
        return parse_rational(v)


class SigmaSection(_Section):
    mode: str = Field("exact", validate_default=True)
    modes: Optional[list[str]] = None
    iid_cells: int = Field(32, ge=1)

    @field_validator("mode")
    @classmethod
    def _mode(cls, v):
        if v not in SIGMA_ALIASES:
            raise ValueError(f"unknown sigma mode {v!r}; use exact or iid")
        return SIGMA_ALIASES[v]

    @field_validator("modes")
    @classmethod
    def _modes(cls, v):
        if v is None:
            return v
        bad = [m for m in v if m not in SIGMA_ALIASES]
        if bad:
            raise ValueError(f"unknown sigma modes {bad}")
        return [SIGMA_ALIASES[m] for m in v]


class BudgetSection(_Section):
    cells: int = Field(1 << 12, ge=1)
    max_height: int = Field(1 << 12, ge=1)


class ChecksSection(_Section):
    setwise: bool = False
    check_route: bool = False


class ZTileSection(_Section):
    radix: int = 3
    stages: int = Field(2, ge=1)
    orders: list[str] = Field(default_factory=lambda: ["boustrophedon"])
    partition_atoms: int = Field(3, ge=1)
    ks: list[int] = Field(default_factory=lambda: [1, 2])
    gs: list[tuple[int, int]] = Field(default_factory=lambda: [(1, 0), (0, 1)])
    samples: int = Field(100, ge=0)
    window: int = Field(4, ge=1)


class EntropySection(_Section):
    ks: list[int] = Field(default_factory=lambda: [1, -1])
    horizon: int = Field(0, ge=0)
    tail_c: Fraction = Fraction(16)
    tail_a: Fraction = Fraction(1)
    tail_b: int = Field(3, ge=1)
    tail_mult: int = Field(1, ge=1)

    @field_validator("tail_c", "tail_a", mode="before")
    @classmethod
    def _rat(cls, v):
        return parse_rational(v)


class OutputSection(_Section):
    dir: str = "out"
    report: str = "report.json"


class RunConfig(_Section):
    pipeline: Literal["weakmix", "ztile", "entropy-only"] = "weakmix"
    seed: int = 0
    base: BaseSection = Field(default_factory=BaseSection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    sigma: SigmaSection = Field(default_factory=SigmaSection)
    budgets: BudgetSection = Field(default_factory=BudgetSection)
    checks: ChecksSection = Field(default_factory=ChecksSection)
    ztile: ZTileSection = Field(default_factory=ZTileSection)
    entropy: EntropySection = Field(default_factory=EntropySection)
    output: OutputSection = Field(default_factory=OutputSection)

    def weakmix(self) -> WeakMixConfig:
        s = self.schedule
        return WeakMixConfig(
            depth=self.base.depth, radix=self.base.radix, c=s.c, K1=s.K1, stages=s.stages,
            sigma=self.sigma.mode, sigma_modes=self.sigma.modes, seed=self.seed,
            cell_budget=self.budgets.cells, iid_cells=self.sigma.iid_cells, granularity=s.granularity,
            M_cap=self.budgets.max_height, L=s.L, M=s.M,
            epsilons=[Q(e) for e in s.epsilons] if s.epsilons else None,
            lookahead=s.lookahead, ells=list(s.ells), partition_sizes=s.partition_sizes,
            setwise=self.checks.setwise, check_route=self.checks.check_route)

    def ztile_config(self) -> ZTileConfig:
        z, s = self.ztile, self.schedule
        return ZTileConfig(radix=z.radix, stages=z.stages, orders=list(z.orders),
                           partition_atoms=z.partition_atoms, eps_scale=s.eps_scale, eps_ratio=s.eps_ratio,
                           ks=list(z.ks), gs=[tuple(g) for g in z.gs], samples=z.samples, window=z.window,
                           seed=self.seed)

    def fixed_stage(self) -> FixedStageConfig:
        s, e = self.schedule, self.entropy
        return FixedStageConfig(
            depth=self.base.depth, radix=self.base.radix, stages=s.stages, eps_scale=s.eps_scale,
            eps_ratio=s.eps_ratio, L1=s.L1, L_ratio=s.L_ratio, K1=s.K1, blocks=list(s.blocks),
            sigma=self.sigma.mode, seed=self.seed, iid_cells=self.sigma.iid_cells,
            cell_budget=self.budgets.cells, ks=list(e.ks), horizon=e.horizon,
            tail_c=e.tail_c, tail_a=e.tail_a, tail_b=e.tail_b, tail_mult=e.tail_mult)

    def validate_pipeline(self) -> None:
        """Run the selected pipeline's own schedule checks; raises ConfigError."""
        try:
            if self.pipeline == "weakmix":
                self.weakmix().validate()
            elif self.pipeline == "ztile":
                self.ztile_config().validate()
            else:
                self.fixed_stage().validate()
        except ConfigError as exc:
            msg = str(exc)
            if "radix" in msg or "order" in msg:
                key = "ztile"
            elif "eps" in msg:
                key = "schedule.epsilons" if self.pipeline == "weakmix" else "schedule.eps_scale"
            else:
                key = "schedule"
            raise ConfigError(f"{key}: {msg}") from exc


def _key_path(loc: tuple) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        lines.append(f"{_key_path(err['loc'])}: {err['msg']}")
    return "\n".join(lines)


def load_data(path: str | Path) -> dict:
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix.lower() == ".json":
        return json.loads(raw)
    return tomllib.loads(raw.decode("utf-8"))


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse, apply CLI overrides, then validate. Raises ConfigError with key paths."""
    try:
        data = load_data(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *head, last = dotted.split(".")
        for key in head:
            node = node.setdefault(key, {})
        node[last] = value
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from exc
    cfg.validate_pipeline()
    return cfg
