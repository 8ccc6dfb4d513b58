"""Command-line front end: `orbitcert run CONFIG [flags]`.

Exit codes: 0 when every hard verdict passes, 2 when a bound or certificate fails,
3 when a budget or scale cap stopped the run early (a partial report is still written),
1 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .dynamics import ConfigError
from .entropy import TailSchedule, entropy_check, ledger_from_stages
from .fixedstage import run_fixed_stage
from .report import write_reports
from .weakmix import run_construction
from .ztile import run_ztile

log = logging.getLogger("orbitcert")

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 2, 3


def _weakmix(cfg: RunConfig) -> tuple[dict, dict[str, str], list[str], bool]:
    res = run_construction(cfg.weakmix())
    payload = {"pipeline": "weakmix", **res.to_json()}
    ledgers: dict[str, str] = {}
    built = len(res.stages)
    if built:
        tail = TailSchedule(c=cfg.entropy.tail_c, a=cfg.entropy.tail_a, b=cfg.entropy.tail_b,
                            mult=cfg.entropy.tail_mult, start=built)
        ent = {}
        for k in cfg.entropy.ks:
            for inverse, tag in ((False, f"alpha_{k}"), (True, f"beta_{k}")):
                ledger, cp = ledger_from_stages(res.cocycle, k, built, cfg.entropy.horizon, inverse=inverse)
                ent[tag] = entropy_check(ledger, [s.measure for _, s in cp.partition.atoms], tail).to_json()
                ledgers[tag] = ledger.to_csv()
        payload["entropy"] = ent
    return payload, ledgers, res.failures(), res.aborted is not None


def _ztile(cfg: RunConfig) -> tuple[dict, dict[str, str], list[str], bool]:
    res = run_ztile(cfg.ztile_config())
    ledgers = {name: ledger.to_csv() for name, ledger, _ in res.entropy}
    return res.to_json(), ledgers, list(res.failures), False


def _entropy_only(cfg: RunConfig) -> tuple[dict, dict[str, str], list[str], bool]:
    res = run_fixed_stage(cfg.fixed_stage())
    return {"pipeline": "entropy-only", **res.to_json()}, res.ledgers, res.failures(), res.aborted is not None


PIPELINES = {"weakmix": _weakmix, "ztile": _ztile, "entropy-only": _entropy_only}


def execute(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[int, list[Path]]:
    """Run the configured pipeline and write its reports; returns (exit code, written files)."""
    payload, ledgers, failures, partial = PIPELINES[cfg.pipeline](cfg)
    payload["seed"] = cfg.seed
    payload["config"] = cfg.model_dump(mode="json", exclude={"output"})
    paths = write_reports(out_dir or cfg.output.dir, cfg.output.report, payload, ledgers)
    for f in failures:
        log.warning("hard failure: %s", f)
    if partial:
        return EXIT_PARTIAL, paths
    return (EXIT_FAIL if failures else EXIT_OK), paths


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orbitcert", description="Exact finite-stage orbit-equivalence certificates.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a pipeline from a TOML or JSON config")
    run.add_argument("config")
    run.add_argument("--stages", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--sigma", choices=["exact", "iid"])
    run.add_argument("--out")
    run.add_argument("--pipeline", choices=sorted(PIPELINES))
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def _overrides(args: argparse.Namespace) -> dict:
    out: dict = {"seed": args.seed, "pipeline": args.pipeline, "output.dir": args.out}
    if args.sigma is not None:
        out["sigma.mode"] = args.sigma
        out["sigma.modes"] = []
    if args.stages is not None:
        out["schedule.stages"] = args.stages
        out["ztile.stages"] = args.stages
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        code, paths = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for p in paths:
        print(p)
    return code


if __name__ == "__main__":
    sys.exit(main())
