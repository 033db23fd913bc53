"""Command-line surface: run, sweep, analyze-replay, dump-offsets.

Exit codes: 0 on success (and on a passing --check-class verdict), 1 on any
run or input error, 2 when a requested class check fails. The default output
directory is ./out, overridable by the RBIS_SIM_OUT environment variable and
by --out (which wins over both).
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import os
import re
import sys
from pathlib import Path
from typing import Optional

from . import offsetdb
from .beacon import read_replay, write_replay
from .demonstrator import positions_csv
from .metrics import (
    USE_CASE_CLASSES,
    classify,
    report_to_json,
    series_csv,
    summarize,
)
from .runner import ReplayError, RunResult, pair_replay_offsets, run_scenario
from .scenario import (
    Scenario,
    ScenarioError,
    load_raw,
    scenario_from_raw,
    set_by_path,
)
from .simclock import derive_seed


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get("RBIS_SIM_OUT", "out"))


def _load(args: argparse.Namespace) -> Scenario:
    raw = load_raw(args.scenario)
    sc = scenario_from_raw(raw)
    if args.seed is not None:
        sc = _with_seed(raw, args.seed)
    return sc


def _with_seed(raw: dict, seed: int) -> Scenario:
    raw = copy.deepcopy(raw)
    raw["scenario"]["seed"] = seed
    return scenario_from_raw(raw)


def _write_result(result: RunResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(result.trace.to_jsonl(), encoding="utf-8")
    (out / "report.json").write_text(report_to_json(result.report), encoding="utf-8")
    (out / "series.csv").write_text(series_csv(result.series_by_node), encoding="utf-8")
    if result.db is not None:
        (out / "offsets.csv").write_text(offsetdb.dump_csv(result.db), encoding="utf-8")
    if result.positions is not None:
        (out / "positions.csv").write_text(positions_csv(result.positions), encoding="utf-8")
    if result.scenario.output.export_replay:
        replay_dir = out / "replay"
        replay_dir.mkdir(exist_ok=True)
        for node in sorted(result.replay):
            with open(replay_dir / f"{node}.beacons", "wb") as fh:
                write_replay(fh, result.replay[node])


def _print_result(result: RunResult, fmt: str) -> None:
    if fmt == "json":
        sys.stdout.write(report_to_json(result.report))
        return
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["node", "n", "median_ns", "max_ns", "min_ns", "q1_ns", "q3_ns", "p99_ns"])
    for node, info in sorted(result.report["nodes"].items()):
        summary = info.get("summary")
        if summary is None:
            writer.writerow([node, 0, "", "", "", "", "", ""])
            continue
        writer.writerow(
            [node, summary["n"], summary["median"], summary["max"], summary["min"],
             summary["q1"], summary["q3"], summary["p99"]]
        )


def _check_class(result: RunResult, class_id: str, criterion: str) -> int:
    combined = result.report.get("combined")
    if combined is None:
        print(f"class check {class_id}: FAIL (no synchronized samples)", file=sys.stderr)
        return 2
    errors = [e for s in result.series_by_node.values() for _, e in s]
    verdict = classify(summarize(errors), USE_CASE_CLASSES[class_id], criterion)
    status = "pass" if verdict else "FAIL"
    # stderr so json/csv on stdout stays machine-parseable
    print(f"class check {class_id} on {criterion}: {status}", file=sys.stderr)
    return 0 if verdict else 2


def cmd_run(args: argparse.Namespace) -> int:
    sc = _load(args)
    result = run_scenario(sc)
    _write_result(result, _out_dir(args))
    _print_result(result, args.format)
    if args.check_class:
        return _check_class(result, args.check_class, args.check_criterion)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    values = [v for v in args.values.split(",") if v != ""]
    if not values:
        raise ScenarioError(["sweep needs a non-empty comma-separated --values list"])
    raw = load_raw(args.scenario)
    out = _out_dir(args)
    rows = []
    for text in values:
        value = float(text) if ("." in text or "e" in text.lower()) else int(text)
        varied = copy.deepcopy(raw)
        set_by_path(varied, args.param, value)
        sc = scenario_from_raw(varied)
        child_seed = derive_seed(sc.seed, f"{args.param}={value}")
        result = run_scenario(sc, seed=child_seed)
        subdir = re.sub(r"[^A-Za-z0-9_.-]", "_", f"{args.param}_{text}")
        _write_result(result, out / subdir)
        errors = [e for s in result.series_by_node.values() for _, e in s]
        summary = summarize(errors) if errors else None
        rows.append((value, child_seed, summary))
    combined = io.StringIO()
    writer = csv.writer(combined, lineterminator="\n")
    writer.writerow(["value", "seed", "n", "median_ns", "max_ns", "min_ns", "q1_ns", "q3_ns", "p99_ns"])
    for value, child_seed, summary in rows:
        if summary is None:
            writer.writerow([value, child_seed, 0, "", "", "", "", "", ""])
        else:
            writer.writerow([value, child_seed, summary.n, summary.median, summary.max,
                             summary.min, summary.q1, summary.q3, summary.p99])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(combined.getvalue(), encoding="utf-8")
    sys.stdout.write(combined.getvalue())
    return 0


def cmd_analyze_replay(args: argparse.Namespace) -> int:
    with open(args.reference, "rb") as fh:
        ref_records = list(read_replay(fh))
    with open(args.station, "rb") as fh:
        st_records = list(read_replay(fh))
    rows = pair_replay_offsets(ref_records, st_records)
    summary = summarize([off for *_rest, off in rows])
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bssid", "tsf_us", "reference_rx_ns", "station_rx_ns", "offset_ns"])
    writer.writerows(rows)
    (out / "replay_offsets.csv").write_text(buf.getvalue(), encoding="utf-8")
    if args.format == "json":
        import json

        sys.stdout.write(json.dumps({"n": summary.n, "summary": summary.as_dict()},
                                    indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_dump_offsets(args: argparse.Namespace) -> int:
    sc = _load(args)
    result = run_scenario(sc)
    if result.db is None:
        print("scenario method has no offset database", file=sys.stderr)
        return 1
    text = offsetdb.dump_csv(result.db)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "offsets.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rbissim",
        description="Deterministic beacon-timestamp synchronization simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario TOML file")
            p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=None, help="output directory (default ./out or $RBIS_SIM_OUT)")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p_run = sub.add_parser("run", help="execute one scenario and write reports")
    common(p_run)
    p_run.add_argument("--check-class", choices=("I", "II", "III"), default=None)
    p_run.add_argument("--check-criterion", choices=("median", "max"), default="max")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the scenario once per parameter value")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         help="dotted path of a numeric scenario field, e.g. aps.*.beacon_interval_tu")
    p_sweep.add_argument("--values", required=True, help="comma-separated numeric values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_replay = sub.add_parser("analyze-replay", help="pair two beacon capture files offline")
    common(p_replay, scenario=False)
    p_replay.add_argument("--reference", required=True, help="reference-station capture file")
    p_replay.add_argument("--station", required=True, help="mobile-station capture file")
    p_replay.set_defaults(func=cmd_analyze_replay)

    p_dump = sub.add_parser("dump-offsets", help="run a scenario and dump the AP offset matrix")
    common(p_dump)
    p_dump.set_defaults(func=cmd_dump_offsets)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ReplayError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
