"""Deterministic report writing: sorted-key JSON with exact fraction strings, plus CSV ledgers."""

from __future__ import annotations

import json
import re
from fractions import Fraction
from pathlib import Path
from typing import Any

import gmpy2

from .ratset import frac_str

SCHEMA = "orbitcert-report/1"


def _default(o: Any):
    if isinstance(o, (Fraction, type(gmpy2.mpq()))):
        return frac_str(o)
    if isinstance(o, type(gmpy2.mpz())):
        return int(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, tuple):
        return list(o)
    to_json = getattr(o, "to_json", None)
    if callable(to_json):
        return to_json()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]+", "_", name).strip("_")


def dumps(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False, default=_default) + "\n"


def write_reports(out_dir: str | Path, report_name: str, payload: dict, ledgers: dict[str, str]) -> list[Path]:
    """Write the JSON report and one CSV per ledger; returns the written paths in order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    path = out / report_name
    path.write_text(dumps({"schema": SCHEMA, **payload}), encoding="utf-8")
    written.append(path)
    for name in sorted(ledgers):
        p = out / f"ledger_{_slug(name)}.csv"
        p.write_text(ledgers[name], encoding="utf-8")
        written.append(p)
    return written
