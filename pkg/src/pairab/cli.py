"""Command-line interface for collaborative analysis of two shared-unit A/B tests.

``pairab analyze data.csv``
    Estimate both treatment effects from a ``unit_id,y1,x1,y2,x2`` CSV and
    print a JSON report.
``pairab simulate --setting a --tau 2 --n 1000 --reps 100``
    Run a Monte Carlo cell (or a grid from ``--config``) and emit MSE ratios
    as CSV.
``pairab timing``
    Compare the O(n) estimators with the dense GLS solve.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or configuration,
3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

from . import sim
from .core import PairedDataset, UnitRecord, balance_diagnostics, validate_dataset
from .errors import (
    ConfigError,
    EstimationError,
    MalformedRow,
    MissingHeader,
    ValidationError,
)
from .estimators import DEFAULT_LEVEL, METHODS, analyze
from .varcomp import VarianceComponents

log = logging.getLogger(__name__)

HEADER = ("unit_id", "y1", "x1", "y2", "x2")
MISSING_TOKENS = ("", "NA")
SEED_ENV = "PAIRAB_SEED"
SCHEMA_PATH = Path(__file__).with_name("schemas") / "report.schema.json"

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 1, 2, 3


# ------------------------------------------------------------------ CSV


def _parse_outcome(text: str, row: int, column: str) -> Optional[float]:
    text = text.strip()
    if text in MISSING_TOKENS:
        return None
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(row, column, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise MalformedRow(row, column, f"outcome must be finite, got {text!r}")
    return v


def _parse_design(text: str, row: int, column: str) -> int:
    try:
        v = float(text.strip())
    except ValueError:
        raise MalformedRow(row, column, f"design must be -1 or 1, got {text!r}") from None
    if v not in (1.0, -1.0):
        raise MalformedRow(row, column, f"design must be -1 or 1, got {text!r}")
    return int(v)


def read_records(stream) -> list[UnitRecord]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip().lstrip("﻿") for h in header) != HEADER:
        raise MissingHeader(f"first row must be {','.join(HEADER)}")
    records = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise MalformedRow(row_no, None, f"expected {len(HEADER)} fields, got {len(row)}")
        uid = row[0].strip()
        if not uid:
            raise MalformedRow(row_no, "unit_id", "empty unit_id")
        records.append(UnitRecord(
            unit_id=uid,
            y1=_parse_outcome(row[1], row_no, "y1"),
            x1=_parse_design(row[2], row_no, "x1"),
            y2=_parse_outcome(row[3], row_no, "y2"),
            x2=_parse_design(row[4], row_no, "x2"),
        ))
    return records


def parse_csv(path) -> list[UnitRecord]:
    """Read unit records from a UTF-8 CSV with header ``unit_id,y1,x1,y2,x2``.

    Empty fields and ``NA`` in outcome columns mean missing; designs accept
    ``-1``/``1`` and their float spellings.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        return read_records(fh)


def dataset_to_csv(ds: PairedDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in ds.iter_records():
        w.writerow([
            r.unit_id,
            "NA" if r.y1 is None else sim.format_float(r.y1),
            r.x1,
            "NA" if r.y2 is None else sim.format_float(r.y2),
            r.x2,
        ])
    return buf.getvalue()


# --------------------------------------------------------------- output


_FLOAT_TOKEN = re.compile(r'"__float__([^"]*)__"')


def _tag_floats(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return f"__float__{sim.format_float(obj)}__"
    if isinstance(obj, dict):
        return {k: _tag_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tag_floats(v) for v in obj]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    """Pretty JSON with every float printed to 17 significant digits."""
    text = json.dumps(_tag_floats(obj), indent=2)
    return _FLOAT_TOKEN.sub(r"\1", text) + "\n"


def write_atomic(path: Optional[str], text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file, or to stdout if ``path`` is None."""
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _error_exit(exc: BaseException, code: int) -> int:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    for attr in ("cell", "count", "row", "column", "unit_id"):
        if hasattr(exc, attr):
            payload["error"][attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def _run_guarded(fn, *args) -> int:
    try:
        return fn(*args)
    except ValidationError as exc:
        return _error_exit(exc, EXIT_VALIDATION)
    except EstimationError as exc:
        return _error_exit(exc, EXIT_ESTIMATION)
    except OSError as exc:
        return _error_exit(exc, EXIT_IO)


# -------------------------------------------------------------- analyze


@dataclass(frozen=True)
class AnalyzeRequest:
    input_path: str
    method: str = "all"
    level: float = DEFAULT_LEVEL
    output_path: Optional[str] = None
    known_components: Optional[tuple[float, float, float]] = None
    format: str = "json"

    def __post_init__(self):
        if self.method not in METHODS + ("all",):
            raise ConfigError(f"method must be one of {METHODS + ('all',)}")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.known_components is not None:
            if len(self.known_components) != 3 or min(self.known_components) < 0:
                raise ConfigError("known components must be three nonnegative numbers")


def build_report(ds: PairedDataset, method: str = "all", level: float = DEFAULT_LEVEL,
                 components: Optional[VarianceComponents] = None) -> dict:
    reports = analyze(ds, method, level, components)
    vc = reports[0].components
    n0, n1, n2 = ds.counts
    return {
        "estimates": [r.to_dict() for r in reports],
        "variance_components": vc.to_dict(),
        "counts": {"n0": n0, "n1": n1, "n2": n2, "n_ignored": ds.n_ignored},
        "diagnostics": balance_diagnostics(ds).to_dict(),
    }


def _report_csv(report: dict) -> str:
    buf = io.StringIO()
    cols = ("experiment", "method", "estimate", "std_error", "ci_lower", "ci_upper", "level")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for e in report["estimates"]:
        w.writerow([sim.format_float(e[c]) if isinstance(e[c], float) else e[c] for c in cols])
    return buf.getvalue()


def cmd_analyze(req: AnalyzeRequest) -> int:
    def run():
        ds = validate_dataset(parse_csv(req.input_path))
        vc = None
        if req.known_components is not None:
            vc = VarianceComponents.known(*req.known_components)
        report = build_report(ds, req.method, req.level, vc)
        if report["diagnostics"]["flagged"]:
            log.warning("design imbalance above %.2f; estimates may be biased",
                        report["diagnostics"]["threshold"])
        text = dumps(report) if req.format == "json" else _report_csv(report)
        write_atomic(req.output_path, text)
        return EXIT_OK
    return _run_guarded(run)


# ------------------------------------------------------------- simulate

_BASE_KEYS = {f.name for f in fields(sim.SimulationConfig)} - {"user_effects"}
_GRID_KEYS = {"settings", "taus", "missing_rates", "ns", "outcomes"}


def load_grid_config(doc: dict, overrides: Optional[dict] = None) -> list[sim.SimulationConfig]:
    """Build simulation cells from a grid document.

    The document has an optional ``base`` object (any
    :class:`~pairab.sim.SimulationConfig` field except ``user_effects``) and
    an optional ``grid`` object with list-valued ``settings``, ``taus``,
    ``missing_rates``, ``ns`` and ``outcomes``. Axes left out of ``grid``
    take the single value from ``base``.
    """
    if not isinstance(doc, dict) or set(doc) - {"base", "grid"}:
        raise ConfigError("grid config must be an object with optional 'base' and 'grid'")
    base = dict(doc.get("base", {}))
    grid = dict(doc.get("grid", {}))
    if set(base) - _BASE_KEYS:
        raise ConfigError(f"unknown base keys: {sorted(set(base) - _BASE_KEYS)}")
    if set(grid) - _GRID_KEYS:
        raise ConfigError(f"unknown grid keys: {sorted(set(grid) - _GRID_KEYS)}")
    base.update(overrides or {})
    if "methods" in base:
        base["methods"] = tuple(base["methods"])
    try:
        cfg = sim.SimulationConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    for key, val in grid.items():
        if not isinstance(val, list) or not val:
            raise ConfigError(f"grid.{key} must be a nonempty list")
    return sim.expand_grid(
        cfg,
        settings=grid.get("settings", [cfg.setting]),
        taus=grid.get("taus", [cfg.tau]),
        missing_rates=grid.get("missing_rates", [cfg.missing_rate]),
        ns=grid.get("ns", [cfg.n]),
        outcomes=grid.get("outcomes", [cfg.outcome]),
    )


def _resolve_seed(flag: Optional[int], doc: dict) -> Optional[int]:
    if flag is not None:
        return flag
    if "base_seed" in doc.get("base", {}):
        return None
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return None


def _summary(result: sim.GridResult, cells: Sequence[sim.SimulationConfig]) -> dict:
    return {
        "cells": len(cells),
        "base_seed": cells[0].base_seed,
        "rows": [
            {"setting": r.setting, "tau": r.tau, "n": r.n, "missing_rate": r.missing_rate,
             "outcome": r.outcome, "method": r.method, "mse_ratio": r.mse_ratio,
             "mse": r.mse, "reps": r.reps}
            for r in result.rows
        ],
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    def run():
        doc = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"invalid JSON in {args.config}: {exc}") from None
        overrides = {}
        for key, attr in (("setting", "setting"), ("tau", "tau"), ("n", "n"),
                          ("reps", "reps"), ("missing_rate", "missing"),
                          ("outcome", "outcome"), ("beta1", "beta1"), ("beta2", "beta2"),
                          ("sigma1", "sigma1"), ("sigma2", "sigma2")):
            val = getattr(args, attr)
            if val is not None:
                overrides[key] = val
        if args.methods:
            overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
        seed = _resolve_seed(args.seed, doc)
        if seed is not None:
            overrides["base_seed"] = seed
        if args.user_effects:
            with open(args.user_effects, encoding="utf-8") as fh:
                try:
                    vals = [float(t) for t in fh.read().split()]
                except ValueError as exc:
                    raise ConfigError(f"bad user effect value: {exc}") from None
            overrides["user_effects"] = tuple(vals)
            overrides.setdefault("n", len(vals))
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cells = load_grid_config(doc, overrides)
        result = sim.run_grid(cells, threads=args.threads)
        write_atomic(args.output, result.to_csv())
        summary_path = args.summary
        if summary_path is None and args.output not in (None, "-"):
            summary_path = str(Path(args.output).with_suffix(".json"))
        if summary_path:
            write_atomic(summary_path, dumps(_summary(result, cells)))
        return EXIT_OK
    return _run_guarded(run)


def cmd_timing(args: argparse.Namespace) -> int:
    def run():
        rows = sim.timing_comparison(args.n, reps=args.reps, seed=args.seed or 0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("n", "method", "seconds"))
        for n, m, t in rows:
            w.writerow((n, m, sim.format_float(t)))
        write_atomic(args.output, buf.getvalue())
        return EXIT_OK
    return _run_guarded(run)


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairab", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate treatment effects from a CSV file")
    a.add_argument("input", help="CSV with header unit_id,y1,x1,y2,x2")
    a.add_argument("--method", default="all", choices=METHODS + ("all",))
    a.add_argument("--level", type=float, default=DEFAULT_LEVEL)
    a.add_argument("--known", type=float, nargs=3, metavar=("TAU2", "SIGMA1_2", "SIGMA2_2"),
                   help="use known variance components instead of moment estimates")
    a.add_argument("--format", default="json", choices=("json", "csv"))
    a.add_argument("-o", "--output", help="output file (default stdout)")

    s = sub.add_parser("simulate", help="Monte Carlo MSE ratios")
    s.add_argument("--config", help="grid configuration JSON")
    s.add_argument("--setting", choices=sim.SETTINGS)
    s.add_argument("--tau", type=float)
    s.add_argument("--n", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--missing", type=float, help="missing rate per experiment")
    s.add_argument("--outcome", choices=sim.OUTCOMES)
    s.add_argument("--beta1", type=float)
    s.add_argument("--beta2", type=float)
    s.add_argument("--sigma1", type=float)
    s.add_argument("--sigma2", type=float)
    s.add_argument("--methods", help="comma-separated subset of single,paired,coe,gls")
    s.add_argument("--seed", type=int, help=f"base seed (fallback: ${SEED_ENV})")
    s.add_argument("--user-effects", help="file with one user effect per unit")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("-o", "--output", help="GridResult CSV (default stdout)")
    s.add_argument("--summary", help="JSON summary path (default: next to --output)")

    t = sub.add_parser("timing", help="time O(n) estimators against dense GLS")
    t.add_argument("--n", type=int, nargs="+", default=[100, 400, 1000])
    t.add_argument("--reps", type=int, default=5)
    t.add_argument("--seed", type=int)
    t.add_argument("-o", "--output")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        try:
            req = AnalyzeRequest(
                input_path=args.input,
                method=args.method,
                level=args.level,
                output_path=args.output,
                known_components=tuple(args.known) if args.known else None,
                format=args.format,
            )
        except ValidationError as exc:
            return _error_exit(exc, EXIT_VALIDATION)
        return cmd_analyze(req)
    if args.command == "simulate":
        return cmd_simulate(args)
    return cmd_timing(args)


if __name__ == "__main__":
    sys.exit(main())
