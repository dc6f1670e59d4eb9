"""Command-line front end.

    manetsec validate SCENARIO
    manetsec run SCENARIO [--seed N] [--out DIR] [--provider test|real]
                          [--strict-chain]
    manetsec report LOGFILE

Exit codes are a stable contract: 0 success (all audit properties passed
and every scripted expectation held), 1 expectation or audit mismatch,
2 invalid input, 3 I/O failure.  ``MANETSEC_OUT`` overrides the default
output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .audit import audit, expectation_met
from .scenariofile import ScenarioParseError, parse_scenario
from .sim import SimulationError, parse_log_text, run, validate_scenario

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_INVALID = 2
EXIT_IO = 3


def _load_scenario(path: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None, EXIT_IO
    try:
        scenario = parse_scenario(text)
    except ScenarioParseError as exc:
        for problem in exc.problems:
            print(f"{path}: {problem}", file=sys.stderr)
        return None, EXIT_INVALID
    problems = validate_scenario(scenario)
    if problems:
        for problem in problems:
            print(f"{path}: {problem}", file=sys.stderr)
        return None, EXIT_INVALID
    return scenario, EXIT_OK


def cmd_validate(args) -> int:
    scenario, status = _load_scenario(args.scenario)
    if status != EXIT_OK:
        return status
    print(f"{args.scenario}: ok ({len(scenario.nodes)} nodes, {len(scenario.groups)} groups)")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario, status = _load_scenario(args.scenario)
    if status != EXIT_OK:
        return status
    if args.seed is not None:
        scenario.seed = args.seed
    if args.provider:
        scenario.provider_name = {"test": "test_double", "real": "real_crypto"}.get(
            args.provider, args.provider
        )
    if args.strict_chain:
        scenario.params = replace(scenario.params, strict_chain=True)
    out_dir = args.out or os.environ.get("MANETSEC_OUT") or "manetsec-out"
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        log = run(scenario)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = audit(log)
    base = os.path.splitext(os.path.basename(args.scenario))[0]
    try:
        with open(os.path.join(out_dir, base + ".log"), "w", encoding="utf-8") as handle:
            handle.write(log.to_text())
        with open(os.path.join(out_dir, base + ".payloads"), "wb") as handle:
            handle.write(log.payload_blob())
        with open(os.path.join(out_dir, base + ".audit.txt"), "w", encoding="utf-8") as handle:
            handle.write(report.to_text())
    except OSError as exc:
        print(f"error: cannot write artifacts: {exc}", file=sys.stderr)
        return EXIT_IO
    ok = report.passed
    for result in report.results:
        print(result.line())
    for expectation in scenario.expectations:
        met, _ = expectation_met(log, expectation)
        label = f"expect {expectation.kind} {' '.join(str(a) for a in expectation.args)}"
        print(f"{label}: {'MET' if met else 'MISSED'}")
        ok = ok and met
    print(f"artifacts: {out_dir}/{base}.log (+.payloads, +.audit.txt)")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_report(args) -> int:
    try:
        with open(args.log, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        print(f"error: cannot read {args.log}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        log = parse_log_text(text)
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    counts = {
        "elections": 0,
        "admits": 0,
        "removals": 0,
        "rekeys": 0,
        "discoveries": 0,
        "accepts": 0,
        "rejects": 0,
        "routes_installed": 0,
        "alerts": 0,
    }
    for event in log.events:
        principal = event.principals
        if event.kind == "elect":
            counts["elections"] += 1
            print(f"t={event.tick:<4} elect    {principal} ({event.detail})")
        elif event.kind == "admit":
            counts["admits"] += 1
            print(f"t={event.tick:<4} admit    {principal} ({event.detail})")
        elif event.kind == "remove":
            counts["removals"] += 1
            print(f"t={event.tick:<4} remove   {principal} ({event.detail})")
        elif event.kind == "rekey":
            counts["rekeys"] += 1
            print(f"t={event.tick:<4} rekey    {principal} ({event.detail})")
        elif event.kind == "alert":
            counts["alerts"] += 1
            print(f"t={event.tick:<4} alert    {principal} ({event.detail})")
        elif event.kind == "verdict":
            if event.detail.startswith("discovery_started"):
                counts["discoveries"] += 1
                print(f"t={event.tick:<4} discover {principal} ({event.detail})")
            elif event.detail.startswith("accept:"):
                counts["accepts"] += 1
                print(f"t={event.tick:<4} accept   {principal} ({event.detail})")
            elif event.detail.startswith("reject:"):
                counts["rejects"] += 1
                print(f"t={event.tick:<4} reject   {principal} ({event.detail})")
            elif event.detail.startswith("route_installed"):
                counts["routes_installed"] += 1
                print(f"t={event.tick:<4} route    {principal} ({event.detail})")
    print(
        "summary: "
        + " ".join(f"{name}={value}" for name, value in counts.items())
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="manetsec",
        description="Deterministic group-MANET key management and secure routing simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a scenario file")
    p_validate.add_argument("scenario")
    p_validate.set_defaults(func=cmd_validate)

    p_run = sub.add_parser("run", help="run a scenario, audit it, write artifacts")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--out", default=None, help="output directory (default $MANETSEC_OUT or ./manetsec-out)")
    p_run.add_argument("--provider", choices=["test", "real"], default=None, help="crypto provider")
    p_run.add_argument("--strict-chain", action="store_true", help="chain-check at every hop")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="human-readable timeline of a log")
    p_report.add_argument("log")
    p_report.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
