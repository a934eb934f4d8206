"""Command-line entry point: ``skillfrontier <subcommand> ...``.

Exit codes: 0 ok, 1 a proposition failed, 2 invalid input or configuration,
3 I/O failure, 4 estimand not identified, 5 proposition check inconclusive.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._backend import BACKEND
from .aggregate import BootstrapSettings, event_study, simple_att
from .did import BASE_PERIODS, CONTROL_GROUPS, Design, att_gt_all
from .errors import IdentificationError, ValidationError
from .panel import (
    OUTCOMES,
    CommitTable,
    Panel,
    build_outcomes,
    drop_bots,
    read_adoption_csv,
    restrict_sample,
    summarize,
    write_adoption_csv,
)
from .sim import SimPanelConfig, check_propositions, format_config, read_config, simulate_panel

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_IDENTIFICATION = 4
EXIT_INCONCLUSIVE = 5

AGGREGATE_SCHEMA = "skillfrontier.aggregate/1"
MANIFEST_SCHEMA = "skillfrontier.manifest/1"
REPORT_EVENT_TIMES = (0, 1, 2)


class _IOFailure(Exception):
    pass


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class _Outputs:
    """Tracks every file a subcommand writes into its output directory."""

    def __init__(self, out_dir):
        self.started = _now()
        self.dir = Path(out_dir)
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            probe = self.dir / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise _IOFailure(f"cannot write to {self.dir}: {exc}") from None
        self.files = []

    def path(self, name):
        p = self.dir / name
        self.files.append(p)
        return p

    def write_text(self, name, text):
        try:
            self.path(name).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise _IOFailure(str(exc)) from None

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(_clean(obj), indent=2, sort_keys=False, default=_json_default) + "\n")

    def write_frame(self, name, df, **kw):
        try:
            df.to_csv(self.path(name), index=False, lineterminator="\n", **kw)
        except OSError as exc:
            raise _IOFailure(str(exc)) from None

    def manifest(self, command, argv, rerun_argv, inputs, config, seed, counts):
        """Write manifest.json; it is the only output carrying timestamps."""
        doc = {
            "schema_version": MANIFEST_SCHEMA,
            "command": command,
            "version": __version__,
            "backend": BACKEND,
            "seed": seed,
            "config": config,
            "argv": list(argv),
            "rerun_argv": list(rerun_argv),
            "out_dir": str(self.dir.resolve()),
            "inputs": {k: {"path": str(Path(v).resolve()), "sha256": _sha256(v)} for k, v in inputs.items()},
            "outputs": [{"file": p.name, "sha256": _sha256(p)} for p in self.files],
            "row_counts": counts,
            "started": self.started,
            "finished": _now(),
        }
        self.write_json("manifest.json", doc)


def _read_input(fn, path, what):
    try:
        return fn(path)
    except FileNotFoundError:
        raise _IOFailure(f"{what} not found: {path}") from None
    except IsADirectoryError:
        raise _IOFailure(f"{what} is a directory: {path}") from None
    except PermissionError as exc:
        raise _IOFailure(str(exc)) from None
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ValidationError(f"cannot parse {what} {path}: {exc}") from None


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _config_dict(config):
    d = dataclasses.asdict(config)
    d["adoption_schedule"] = {str(g): c for g, c in sorted(config.resolved_schedule().items())}
    return d


def _abs(path):
    return str(Path(path).resolve())


# ----------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    config = _read_input(read_config, args.config, "config") if args.config else SimPanelConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.n_developers is not None:
        config = dataclasses.replace(config, n_developers=args.n_developers)
    out = _Outputs(args.out)
    records, adoption = simulate_panel(config)
    out.write_text("config.txt", format_config(config))
    try:
        records.to_csv(out.path("records.csv"))
        write_adoption_csv(adoption, out.path("adoption.csv"))
    except OSError as exc:
        raise _IOFailure(str(exc)) from None
    rerun = ["simulate", "--config", _abs(out.dir / "config.txt"), "--out", "{out}"]
    out.manifest(
        "simulate",
        args.argv,
        rerun,
        {},
        _config_dict(config),
        config.seed,
        {"records": len(records), "adoption": len(adoption)},
    )
    print(f"wrote {len(records)} commit records for {config.n_developers} developers to {out.dir}")
    return EXIT_OK


def cmd_build_panel(args):
    table = _read_input(CommitTable.read_csv, args.records, "records")
    adoption = _read_input(read_adoption_csv, args.adoption, "adoption")
    n_records_in = len(table)
    if not args.keep_bots:
        table, adoption = drop_bots(table, adoption)
    window = tuple(args.window) if args.window else None
    out = _Outputs(args.out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        panel = build_outcomes(table, adoption, window=window)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    try:
        panel.to_csv(out.path("panel.csv"))
    except OSError as exc:
        raise _IOFailure(str(exc)) from None
    summary = summarize(panel)
    out.write_text("summary.txt", summary.to_text() + "\n")
    rerun = ["build-panel", "--records", _abs(args.records), "--adoption", _abs(args.adoption), "--out", "{out}"]
    if window:
        rerun += ["--window", str(window[0]), str(window[1])]
    if args.keep_bots:
        rerun.append("--keep-bots")
    out.manifest(
        "build-panel",
        args.argv,
        rerun,
        {"records": args.records, "adoption": args.adoption},
        {"window": list(window) if window else None, "keep_bots": args.keep_bots},
        None,
        {
            "records_in": n_records_in,
            "records_kept": len(table),
            "duplicates_merged": panel.duplicates_merged,
            "panel_rows": panel.n_developers * panel.n_months,
        },
    )
    print(summary.to_text())
    return EXIT_OK


def _estimate_outcome(panel, outcome, design, settings, e_min, e_max):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        attgt = att_gt_all(panel, outcome, design)
    post = [c for c in attgt.cells if c.identified and c.t >= c.g]
    if not post:
        failing = [c for c in attgt.cells if not c.identified and c.t >= c.g]
        first = (failing[0].g, failing[0].t) if failing else None
        where = f"; first failing cell ATT{first}: {', '.join(failing[0].flags)}" if failing else ""
        raise IdentificationError(first, f"no identified post-treatment ATT(g,t) cell for {outcome}{where}")
    simple = simple_att(attgt, settings)
    es = event_study(attgt, e_min, e_max, settings)
    return attgt, simple, es


def cmd_estimate(args):
    outcomes = list(OUTCOMES) if args.all_outcomes else [args.outcome]
    covariates = tuple(c for c in (args.covariates or "").split(",") if c)
    design = Design(
        anticipation=args.anticipation,
        control_group=args.control,
        base_period=args.base_period,
        estimation=args.estimation,
        covariates=covariates,
    )
    settings = BootstrapSettings(n_draws=args.bootstrap_draws, weights=args.multiplier, seed=args.seed)
    if args.e_min > args.e_max:
        raise ValidationError("--e-min must not exceed --e-max")
    panel = _read_input(lambda p: Panel.read_csv(p, covariates=covariates), args.panel, "panel")
    for o in outcomes:
        panel.outcome(o)
    n_before = panel.n_developers
    panel = restrict_sample(
        panel,
        require_pre_activity=args.require_pre_activity,
        min_pre_active_frac=args.min_pre_active_frac,
        min_pre_active_months=args.min_pre_active_months,
    )
    if panel.n_developers == 0:
        raise IdentificationError(None, "no developers left after the sample restrictions")
    ft = panel.first_treat
    last = int(panel.months[-1])
    if design.control_group == "never-treated" and not np.any((ft == 0) | (ft > last)):
        raise IdentificationError(None, "control group 'never-treated' requested but the panel has no never-treated developers")

    out = _Outputs(args.out)
    agg = {
        "schema_version": AGGREGATE_SCHEMA,
        "version": __version__,
        "seed": args.seed,
        "design": design.echo(),
        "bootstrap": {"n_draws": settings.n_draws, "weights": settings.weights, "level": settings.level},
        "sample": {
            "n_developers_input": n_before,
            "n_developers": panel.n_developers,
            "n_months": panel.n_months,
            "require_pre_activity": args.require_pre_activity,
            "min_pre_active_frac": args.min_pre_active_frac,
            "min_pre_active_months": args.min_pre_active_months,
        },
        "event_window": [args.e_min, args.e_max],
        "outcomes": {},
    }
    n_cells = {}
    for o in outcomes:
        attgt, simple, es = _estimate_outcome(panel, o, design, settings, args.e_min, args.e_max)
        n_cells[o] = len(attgt.cells)
        out.write_json(f"attgt_{o}.json", attgt.to_dict())
        if args.write_influence:
            out.write_frame(f"influence_{o}.csv", attgt.influence_frame(), float_format="%.17g")
        es_df = pd.DataFrame(es.to_rows(), columns=["e", "att", "se", "unif_lo", "unif_hi", "n_cohorts"])
        out.write_frame(f"event_study_{o}.csv", es_df, float_format="%.12g")
        rows = es.to_rows()
        for r, sd in zip(rows, es.se_sd):
            r["se_sd"] = float(sd)
        agg["outcomes"][o] = {
            "simple_att": {"estimate": simple.estimate, "se": simple.se, "se_sd": simple.se_sd},
            "event_study": rows,
            "uniform_crit": es.crit,
            "omitted_event_times": es.omitted,
            "pretrend": es.pretrend,
            "n_cells": len(attgt.cells),
            "n_identified": len(attgt.identified()),
        }
        print(f"{o:<22} simple ATT {simple.estimate: .4f} (se {simple.se:.4f})")
    out.write_json("aggregate.json", agg)
    rerun = ["estimate", "--panel", _abs(args.panel), "--out", "{out}"] + _estimate_flags(args)
    out.manifest(
        "estimate",
        args.argv,
        rerun,
        {"panel": args.panel},
        {"design": design.echo(), "bootstrap": agg["bootstrap"], "sample": agg["sample"], "event_window": agg["event_window"]},
        args.seed,
        {"panel_rows_in": n_before * panel.n_months, "panel_rows_used": panel.n_developers * panel.n_months, "cells": n_cells},
    )
    return EXIT_OK


def _estimate_flags(args):
    flags = ["--all-outcomes"] if args.all_outcomes else ["--outcome", args.outcome]
    flags += [
        "--anticipation", str(args.anticipation),
        "--control", args.control,
        "--base-period", args.base_period,
        "--estimation", args.estimation,
        "--bootstrap-draws", str(args.bootstrap_draws),
        "--multiplier", args.multiplier,
        "--e-min", str(args.e_min),
        "--e-max", str(args.e_max),
        "--seed", str(args.seed),
    ]  # fmt: skip
    if args.covariates:
        flags += ["--covariates", args.covariates]
    if not args.require_pre_activity:
        flags.append("--no-require-pre-activity")
    if args.min_pre_active_frac is not None:
        flags += ["--min-pre-active-frac", repr(args.min_pre_active_frac)]
    if args.min_pre_active_months is not None:
        flags += ["--min-pre-active-months", str(args.min_pre_active_months)]
    if args.write_influence:
        flags.append("--write-influence")
    return flags


def cmd_check_props(args):
    config = _read_input(read_config, args.config, "config") if args.config else SimPanelConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.n_developers is not None:
        config = dataclasses.replace(config, n_developers=args.n_developers)
    out = _Outputs(args.out)
    report = check_propositions(config, args.reps)
    out.write_text("config.txt", format_config(config))
    out.write_json("propositions.json", {"schema_version": "skillfrontier.propositions/1", "version": __version__, **report.to_dict()})
    out.write_text("propositions.txt", report.to_text() + "\n")
    rerun = ["check-props", "--config", _abs(out.dir / "config.txt"), "--reps", str(args.reps), "--out", "{out}"]
    out.manifest("check-props", args.argv, rerun, {}, _config_dict(config), config.seed, {"replications": args.reps})
    print(report.to_text())
    if report.all_passed:
        return EXIT_OK
    if any(r.status == "fail" for r in report.results.values()):
        return EXIT_FAILED
    return EXIT_INCONCLUSIVE


def _fmt_est(est, se):
    if est is None:
        return ""
    star = "*" if se is not None and se > 0 and abs(est / se) > 1.96 else ""
    return f"{est:.3f}{star}"


def _fmt_se(se):
    return "" if se is None else f"({se:.3f})"


def _load_aggregate(path):
    def load(p):
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    try:
        doc = _read_input(load, path, "aggregate")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != AGGREGATE_SCHEMA:
        raise ValidationError(f"{path}: expected schema_version {AGGREGATE_SCHEMA!r}, got {doc.get('schema_version') if isinstance(doc, dict) else None!r}")
    return doc


def _es_lookup(entry, e):
    for row in entry.get("event_study", []):
        if row["e"] == e:
            return row["att"], row["se"]
    return None, None


def report_table(docs, labels=None):
    """Text table of event-time and overall ATTs.

    With one input the columns are ATT(0), ATT(1), ATT(2) and the simple
    ATT.  With several inputs each input is one column holding its ATT(0).
    Standard errors sit in parentheses under each estimate; ``*`` marks
    ``|t| > 1.96``.
    """
    names = [o for o in OUTCOMES if any(o in d["outcomes"] for d in docs)]
    names += sorted({o for d in docs for o in d["outcomes"]} - set(names))
    if len(docs) == 1:
        header = [f"ATT({e})" for e in REPORT_EVENT_TIMES] + ["Simple"]
        d = docs[0]
        body = []
        for o in names:
            entry = d["outcomes"].get(o, {})
            pairs = [_es_lookup(entry, e) for e in REPORT_EVENT_TIMES]
            s = entry.get("simple_att", {})
            pairs.append((s.get("estimate"), s.get("se")))
            body.append((o, pairs))
    else:
        header = list(labels) if labels else [f"({j + 1})" for j in range(len(docs))]
        body = [(o, [_es_lookup(d["outcomes"].get(o, {}), 0) for d in docs]) for o in names]
    width = max(12, *(len(h) + 2 for h in header))
    first = max(len("outcome"), *(len(o) for o in names)) + 2
    lines = ["outcome".ljust(first) + "".join(h.rjust(width) for h in header)]
    for o, pairs in body:
        lines.append(o.ljust(first) + "".join(_fmt_est(e, s).rjust(width) for e, s in pairs))
        lines.append("".ljust(first) + "".join(_fmt_se(s).rjust(width) for _, s in pairs))
    return "\n".join(lines)


def cmd_report(args):
    docs = [_load_aggregate(p) for p in args.inputs]
    labels = args.labels.split(",") if args.labels else None
    if labels and len(labels) != len(docs):
        raise ValidationError(f"{len(labels)} labels for {len(docs)} inputs")
    text = report_table(docs, labels)
    if args.out:
        try:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise _IOFailure(str(exc)) from None
    print(text)
    return EXIT_OK


def cmd_rerun(args):
    def load(p):
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)

    try:
        doc = _read_input(load, args.manifest, "manifest")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest is not valid JSON: {exc}") from None
    if doc.get("schema_version") != MANIFEST_SCHEMA:
        raise ValidationError("not a run manifest")
    argv = [a.replace("{out}", str(args.out)) for a in doc["rerun_argv"]]
    code = main(argv)
    if code != EXIT_OK:
        return code
    fresh = {}
    for entry in doc["outputs"]:
        p = Path(args.out) / entry["file"]
        fresh[entry["file"]] = p.exists() and _sha256(p) == entry["sha256"]
    mism = [f for f, ok in fresh.items() if not ok]
    if mism:
        print("outputs differ from the manifest: " + ", ".join(mism), file=sys.stderr)
        return EXIT_FAILED
    print(f"reproduced {len(fresh)} outputs")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def _add_common(p, seed_default=None):
    p.add_argument("--seed", type=int, default=seed_default, help="random seed")
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="skillfrontier", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate commit records and adoption months")
    p.add_argument("--config", help="simulation config file (key = value lines)")
    p.add_argument("--n-developers", type=int, help="override the configured population size")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-panel", help="fold commit records into a developer-month panel")
    p.add_argument("--records", required=True)
    p.add_argument("--adoption", required=True)
    p.add_argument("--window", nargs=2, type=int, metavar=("FIRST", "LAST"))
    p.add_argument("--keep-bots", action="store_true", help="keep automation accounts")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_panel)

    p = sub.add_parser("estimate", help="staggered DiD estimates for panel outcomes")
    p.add_argument("--panel", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--outcome", choices=OUTCOMES + ("n_sectors",))
    which.add_argument("--all-outcomes", action="store_true")
    p.add_argument("--anticipation", type=int, default=1)
    p.add_argument("--control", choices=CONTROL_GROUPS, default="not-yet-treated")
    p.add_argument("--base-period", choices=BASE_PERIODS, default="varying")
    p.add_argument("--estimation", choices=("doubly-robust", "unconditional"), default="doubly-robust")
    p.add_argument("--covariates", help="comma-separated covariate columns in the panel")
    p.add_argument("--bootstrap-draws", type=int, default=1000)
    p.add_argument("--multiplier", choices=("rademacher", "mammen"), default="rademacher")
    p.add_argument("--e-min", type=int, default=-6)
    p.add_argument("--e-max", type=int, default=10)
    p.add_argument("--require-pre-activity", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--min-pre-active-frac", type=float)
    p.add_argument("--min-pre-active-months", type=int)
    p.add_argument("--write-influence", action="store_true", help="also write per-developer influence values")
    _add_common(p, seed_default=0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("check-props", help="paired AI-on/AI-off check of the model predictions")
    p.add_argument("--config")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--n-developers", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_check_props)

    p = sub.add_parser("report", help="format aggregate.json files as a table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--labels", help="comma-separated column labels for several inputs")
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rerun", help="repeat a run from its manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    args.argv = argv
    try:
        return args.func(args)
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IdentificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
