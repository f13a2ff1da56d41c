"""Command-line driver: generate, simulate, compare, eval.

Every subcommand is deterministic given its inputs. Numbers are printed and
written with 6 decimals; manifests hold the merged configuration and the
sha256 of the input log, never absolute paths.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .calibration import gap_curve
from .datagen import GenSpec, generate
from .domain import Strategy, StrategyConfig
from .errors import (
    DegenerateLabels,
    EmptyLedger,
    EmptyRecords,
    EmptySamples,
    InvalidSpec,
    LogFormatError,
    ManifestMismatch,
    NoValidGroups,
    UnorderedLog,
)
from .metrics import (
    TABLE_KEYS,
    LabeledScore,
    adjustment_histogram,
    aggregate,
    auc_arrays,
    compare,
    delta_table,
    fmt,
    fmt_pct,
    format_table,
    gauc_details,
    report_csv,
)
from .objectives import ObjectiveSpec
from .simulator import Ledger, per_campaign_report, per_category_report, replay_many

log = logging.getLogger("ocpc")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SPEC = 4
EXIT_UNORDERED = 5
EXIT_MISMATCH = 6
EXIT_METRIC = 7

MANIFEST = "manifest.json"
HIST_BINS = 9
OBJECTIVES = ("f1", "f2", "sigma-gmv", "sigma-cvr", "sigma-asr")
STRATEGY_LABELS = {0: "Str 0", 1: "Str 1", 2: "Str 2", 3: "Str 3"}


class UsageError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: not valid JSON ({exc})") from None


def _csv_lines(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    data = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.n_pv is not None:
        data["n_pv"] = args.n_pv
    spec = GenSpec.from_dict(data)
    n, digest = generate(spec, args.out)
    print(f"records {n}")
    print(f"sha256 {digest}")
    return EXIT_OK


# ---------------------------------------------------------------- simulate

_CONFIG_KEYS = {"strategy", "objective", "alpha", "w", "objective_w", "ra", "tc", "slots", "reserve", "budget",
                "seed", "sweep_ra"}


def _merged_settings(args) -> dict:
    """Config-file values overridden by any flag given on the command line."""
    settings = {
        "strategy": 2, "objective": "sigma-gmv", "alpha": 1.0, "w": None, "objective_w": 6.0, "ra": None,
        "tc": 0.012, "slots": None, "reserve": 0.0, "budget": True, "seed": None, "sweep_ra": None,
    }
    if args.config:
        data = _read_json(args.config)
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
        settings.update(data)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _parse_sweep(text) -> Optional[list[float]]:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        values = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--sweep-ra expects comma-separated numbers, got {text!r}") from None
    if not values:
        raise UsageError("--sweep-ra needs at least one value")
    return values


def _build_config(settings: dict, strategy=None, ra=None) -> StrategyConfig:
    strategy = Strategy(int(settings["strategy"] if strategy is None else strategy))
    # Str1 defaults to w=2, the objective's sigma to w=6
    w = settings["w"]
    str1_w = 2.0 if w is None else float(w)
    obj_w = float(settings["objective_w"] if w is None or strategy is not Strategy.STR2 else w)
    objective = ObjectiveSpec.from_name(settings["objective"], float(settings["alpha"]), obj_w)
    return StrategyConfig(
        strategy=strategy,
        objective=objective,
        w=str1_w,
        calibration_threshold=float(settings["tc"]),
        reserve_score=float(settings["reserve"]),
        enforce_budget=bool(settings["budget"]),
        ra_override=settings["ra"] if ra is None else ra,
    )


def _summary_row(label: str, report) -> list[str]:
    return [label] + [fmt(getattr(report, k)) for k in TABLE_KEYS]


def _write_run(out: Path, ledger: Ledger, settings: dict, label: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    ledger.to_csv(out / "ledger.csv")
    if len(ledger):
        report = aggregate(ledger)
        (out / "report.csv").write_text(report_csv(report, label))
        hist = adjustment_histogram(ledger.columns, HIST_BINS)
        _csv_lines(
            out / "histogram.csv",
            ["group", "count", "proportion"],
            [[i + 1, int(c), fmt(float(p))] for i, (c, p) in enumerate(zip(hist.counts, hist.proportions))],
        )
    else:
        (out / "report.csv").write_text("label\n" + label + "\n")
    states = ledger.campaign_states
    _csv_lines(
        out / "campaigns.csv",
        ["campaign_id", "initial_budget", "spent", "remaining"],
        [
            [cid, fmt(ledger.initial_budgets[cid]), fmt(st.cost), fmt(st.budget_remaining)]
            for cid, st in states.items()
        ],
    )
    manifest = {
        "tool": "ocpc",
        "version": __version__,
        "command": "simulate",
        "label": label,
        "settings": settings,
        **ledger.meta,
    }
    _write_json(out / MANIFEST, manifest)


def cmd_simulate(args) -> int:
    settings = _merged_settings(args)
    sweep = _parse_sweep(settings["sweep_ra"])
    settings["sweep_ra"] = sweep
    try:
        if sweep:
            configs = [_build_config(settings, strategy=0)]
            configs += [_build_config(settings, ra=r) for r in sweep]
            labels = ["baseline"] + [f"ra_{r:.6f}" for r in sweep]
        else:
            configs = [_build_config(settings)]
            labels = [STRATEGY_LABELS[int(configs[0].strategy)]]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not Path(args.log).is_file():
        raise FileNotFoundError(f"no such log file: {args.log}")

    ledgers = replay_many(args.log, configs, n_slots=settings["slots"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not sweep:
        _write_run(out, ledgers[0], settings, labels[0])
        led = ledgers[0]
        if not len(led):
            print("no impressions were served")
            return EXIT_OK
        print(format_table([""] + [k.upper() for k in TABLE_KEYS], [_summary_row(labels[0], aggregate(led))]), end="")
        return EXIT_OK

    for led, label in zip(ledgers, labels):
        _write_run(out / label, led, settings, label)
    base = aggregate(ledgers[0])
    rows = {}
    csv_rows = []
    for r, led in zip(sweep, ledgers[1:]):
        d = compare(base, aggregate(led), TABLE_KEYS)
        rows[f"r_a = {r:g}"] = d
        csv_rows.append([fmt(r)] + [fmt(d[k]) for k in TABLE_KEYS])
    _csv_lines(out / "sweep.csv", ["r_a"] + [f"delta_{k}" for k in TABLE_KEYS], csv_rows)
    table = delta_table(rows)
    (out / "sweep.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def _load_run(run_dir: Path) -> tuple[dict, Ledger]:
    manifest = _read_json(run_dir / MANIFEST)
    return manifest, Ledger.from_csv(run_dir / "ledger.csv", manifest)


def cmd_compare(args) -> int:
    base_dir, test_dir = Path(args.base), Path(args.test)
    base_m, base = _load_run(base_dir)
    test_m, test = _load_run(test_dir)
    if base_m.get("log_sha256") != test_m.get("log_sha256"):
        raise ManifestMismatch(
            f"runs replayed different logs: {base_m.get('log_sha256')} vs {test_m.get('log_sha256')}"
        )
    if not len(base) or not len(test):
        raise EmptyLedger("both runs need at least one impression to compare")
    b_rep, t_rep = aggregate(base), aggregate(test)
    deltas = compare(b_rep, t_rep)
    label = test_m.get("label", "test")
    camp = per_campaign_report(test, base, args.min_conversions)
    cat = per_category_report(test, base)

    summary = delta_table({label: deltas})
    camp_table = format_table(["Campaign outcome", "Proportion"], camp.summary_rows())
    cat_shift = format_table(
        ["Category", "Base PV share", "Test PV share", "Variation"],
        [[r.key, fmt(r.base_share), fmt(r.test_share), fmt_pct(r.share_variation)] for r in cat.rows],
    )
    cat_table = format_table(["Category outcome", "By count", "By PV"], cat.summary_rows())
    text = "\n".join([summary, camp_table, cat_shift, cat_table])
    print(text, end="")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _csv_lines(
            out / "deltas.csv",
            ["metric", "base", "test", "delta"],
            [[k, fmt(getattr(b_rep, k)), fmt(getattr(t_rep, k)), fmt(deltas[k])] for k in deltas],
        )
        _csv_lines(
            out / "campaigns.csv",
            ["campaign_id", "base_gmv", "test_gmv", "base_cost", "test_cost", "base_impressions",
             "test_impressions", "delta_gpm", "delta_roi", "delta_impressions", "outcome", "included"],
            [
                [r.key, fmt(r.base.gmv), fmt(r.test.gmv), fmt(r.base.cost), fmt(r.test.cost),
                 fmt(r.base.impressions), fmt(r.test.impressions), fmt(r.deltas["gpm"]),
                 fmt(r.deltas["roi"]), fmt(r.deltas["impressions"]), r.outcome.value, int(r.included)]
                for r in camp.rows
            ],
        )
        _csv_lines(
            out / "categories.csv",
            ["category_id", "base_pv_share", "test_pv_share", "share_variation", "delta_gpm", "delta_roi",
             "outcome"],
            [
                [r.key, fmt(r.base_share), fmt(r.test_share), fmt(r.share_variation), fmt(r.deltas["gpm"]),
                 fmt(r.deltas["roi"]), r.outcome.value]
                for r in cat.rows
            ],
        )
        _csv_lines(
            out / "outcomes.csv",
            ["scope", "outcome", "proportion", "pv_proportion"],
            [["campaign", k, fmt(v), "NA"] for k, v in camp.proportions.items()]
            + [["category", k, fmt(cat.by_count[k]), fmt(cat.by_pv[k])] for k in cat.by_count],
        )
        (out / "compare.txt").write_text(text)
        _write_json(
            out / MANIFEST,
            {
                "tool": "ocpc",
                "version": __version__,
                "command": "compare",
                "log_sha256": base_m.get("log_sha256"),
                "base": {"label": base_m.get("label"), "settings": base_m.get("settings")},
                "test": {"label": label, "settings": test_m.get("settings")},
                "min_conversions": args.min_conversions,
            },
        )
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _read_scores(path: Path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = {"user_id", "position_id", "score", "label"} - set(cols)
        if missing:
            raise LogFormatError(f"{path}: missing columns {sorted(missing)}")
        samples, pairs = [], []
        has_pair = "predicted" in cols and "realized" in cols
        for row in reader:
            try:
                s = LabeledScore(row["user_id"], row["position_id"], float(row["score"]), int(row["label"]))
                pair = (float(row["predicted"]), float(row["realized"])) if has_pair else (s.score, float(s.label))
            except (TypeError, ValueError) as exc:
                raise LogFormatError(f"{path}: line {reader.line_num}: {exc}") from None
            if s.label not in (0, 1) or not math.isfinite(s.score):
                raise LogFormatError(f"{path}: line {reader.line_num}: label must be 0/1 and score finite")
            samples.append(s)
            pairs.append(pair)
    return samples, pairs


def cmd_eval(args) -> int:
    path = Path(args.scores)
    samples, pairs = _read_scores(path)
    overall = auc_arrays([s.score for s in samples], [s.label for s in samples])
    g = gauc_details(samples, args.weight_mode)
    curve = gap_curve(pairs, args.buckets)
    print(f"AUC {fmt(overall)}")
    print(f"GAUC {fmt(g.value)} ({args.weight_mode} weighted)")
    print(f"groups used {g.groups_used}, removed {g.groups_removed} (single-class)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        curve.to_csv(out / "gap_curve.csv")
        _csv_lines(
            out / "eval.csv",
            ["metric", "value"],
            [["auc", fmt(overall)], ["gauc", fmt(g.value)], ["groups_used", g.groups_used],
             ["groups_removed", g.groups_removed]],
        )
    return EXIT_OK


# ---------------------------------------------------------------- entry


def _bool_flag(p: argparse.ArgumentParser, name: str, help: str) -> None:
    p.add_argument(f"--{name}", dest=name, action=argparse.BooleanOptionalAction, default=None, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded synthetic bid log")
    g.add_argument("--spec", type=Path, help="GenSpec JSON file (defaults to the desk-scale spec)")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--n-pv", dest="n_pv", type=int)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="replay a log under one strategy or an r_a sweep")
    s.add_argument("log", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--config", type=Path, help="JSON file of settings; flags take precedence")
    s.add_argument("--strategy", type=int, choices=range(4))
    s.add_argument("--objective", choices=OBJECTIVES)
    s.add_argument("--alpha", type=float)
    s.add_argument("--w", type=float, help="sigma exponent (default 2 for Str1, 6 for the Str2 objective)")
    s.add_argument("--ra", type=float, help="override every campaign's adjustment range")
    s.add_argument("--tc", type=float, help="CVR calibration threshold")
    s.add_argument("--slots", type=int, help="override the per-PV slot count")
    s.add_argument("--reserve", type=float, help="reserve score")
    _bool_flag(s, "budget", "enforce campaign budgets (default on)")
    s.add_argument("--seed", type=int, help="recorded in the manifest; replay itself draws no randomness")
    s.add_argument("--sweep-ra", dest="sweep_ra", help="comma-separated r_a values; runs Str2 per value plus a Str0 baseline")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="compare two simulate runs over the same log")
    c.add_argument("base", type=Path)
    c.add_argument("test", type=Path)
    c.add_argument("--out", type=Path)
    c.add_argument("--min-conversions", dest="min_conversions", type=float, default=5.0)
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("eval", help="AUC, GAUC and gap curve for a scores CSV")
    e.add_argument("scores", type=Path)
    e.add_argument("--weight-mode", dest="weight_mode", choices=("impressions", "clicks"), default="impressions")
    e.add_argument("--buckets", type=int, default=20)
    e.add_argument("--out", type=Path)
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("OCPC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ocpc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidSpec as exc:
        print(f"ocpc: invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except UnorderedLog as exc:
        print(f"ocpc: unordered log: {exc}", file=sys.stderr)
        return EXIT_UNORDERED
    except ManifestMismatch as exc:
        print(f"ocpc: manifest mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (DegenerateLabels, NoValidGroups, EmptySamples, EmptyLedger, EmptyRecords) as exc:
        print(f"ocpc: metric error: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except (OSError, LogFormatError) as exc:
        print(f"ocpc: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
