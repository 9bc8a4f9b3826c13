"""Command line entry point.

Exit status: 0 when nothing was found, 1 when violations were found, 2 on a
usage or configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .campaign import CampaignConfig, calibrate, replay, run_campaign
from .chain import ConfigError, ProtocolKind
from .monitor import StateTransitionGraph, VerdictKind, classify_false_positive
from .scenarios import GeneratorConfig, ScenarioError, dumps, generate, load, validate

EXIT_CLEAN, EXIT_VIOLATIONS, EXIT_USAGE = 0, 1, 2
PROTOCOLS = [k.value for k in ProtocolKind]


def _bounds(items) -> dict:
    out = {}
    for item in items or ():
        label, sep, ms = item.partition("=")
        if not sep:
            raise ConfigError(f"time bound {item!r} is not LABEL=MS")
        out[label] = int(ms)
    return out


def _campaign_args(p: argparse.ArgumentParser):
    p.add_argument("--protocol", "-p", choices=PROTOCOLS, required=True)
    p.add_argument("--count", "-n", type=int, default=100, help="generated scenarios")
    p.add_argument("--rounds", "-r", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="first scenario seed")
    p.add_argument("--workers", "-j", type=int, default=1)
    p.add_argument("--replicas", type=int, default=None, help="replica count (default 4, 3 for sync)")
    p.add_argument("--delay-injection", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--count-faulty", action="store_true",
                   help="credit the twinned process towards every block when checking for a quorum")
    p.add_argument("--scenario", action="append", default=[], metavar="FILE",
                   help="extra scenario file to include (repeatable)")


def _load_checked(path):
    s = load(path)
    findings = validate(s)
    if findings:
        raise ScenarioError([f"{path}: {f}" for f in findings])
    return s


def _config(a, **kw) -> CampaignConfig:
    return CampaignConfig(
        kind=a.protocol, scenario_count=a.count, rounds=a.rounds, master_seed=a.seed,
        workers=a.workers, n=a.replicas, delay_injection=a.delay_injection,
        count_faulty=a.count_faulty, extra=tuple(_load_checked(f) for f in a.scenario), **kw,
    )


def cmd_generate(a) -> int:
    gcfg = GeneratorConfig.for_kind(
        a.protocol, rounds=a.rounds, delay_injection=bool(a.delay_injection),
        leader_law=a.leader_law, partitions_per_round=a.partitions,
        **({"n": a.replicas} if a.replicas else {}))
    seeds = range(a.seed, a.seed + a.count)
    if a.out is None:
        for seed in seeds:
            sys.stdout.write(dumps(generate(gcfg, seed)) + ("\n" if a.count > 1 else ""))
        return EXIT_CLEAN
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        (out / f"seed-{seed}.scn").write_text(dumps(generate(gcfg, seed)))
    print(f"wrote {a.count} scenarios to {out}")
    return EXIT_CLEAN


def cmd_validate(a) -> int:
    bad = 0
    for path in a.files:
        try:
            findings = validate(load(path))
        except ScenarioError as exc:
            findings = exc.findings
        if findings:
            bad += 1
            for f in findings:
                print(f"{path}: {f}")
        else:
            print(f"{path}: ok")
    return EXIT_USAGE if bad else EXIT_CLEAN


def cmd_run(a) -> int:
    bounds = _bounds(a.bound) if a.bound else None
    cfg = _config(a, thresholds=tuple(a.tt), time_bounds=bounds, lasso=not a.no_lasso,
                  out_dir=a.out, calibration_runs=a.calibration_runs)
    report = run_campaign(cfg)
    sys.stdout.write(report.to_csv() if a.csv else report.to_table())
    if a.out:
        print(f"artifacts in {a.out}", file=sys.stderr)
    return EXIT_VIOLATIONS if report.true_violations() else EXIT_CLEAN


def cmd_replay(a) -> int:
    s = _load_checked(a.file)
    graph = StateTransitionGraph.parse(Path(a.graph).read_text()) if a.graph else None
    res = replay(s, temperature=a.tt or None, lasso=not a.no_lasso, time_bound=a.bound,
                 safety=not a.no_safety, count_faulty=a.count_faulty, graph=graph)
    sys.stdout.write(res.render())
    if a.log:
        Path(a.log).write_text(res.execution.event_log())
    if a.trace:
        Path(a.trace).write_text(res.execution.dump())
    if res.verdicts and any(v.kind is VerdictKind.LIVENESS for v in res.verdicts):
        fp = classify_false_positive(res.execution)
        print(f"final locks {'hold no conflict (false positive)' if fp else 'conflict (true violation)'}")
    return EXIT_VIOLATIONS if res.verdicts else EXIT_CLEAN


def cmd_calibrate(a) -> int:
    c = calibrate(a.protocol, a.rounds, a.count, a.seed, a.replicas)
    print(f"T_mean={c.mean:.1f} ms  T_std={c.std:.1f} ms  over {c.samples} failure-free runs")
    for label, ms in c.bounds.items():
        print(f"{label}={ms}")
    return EXIT_CLEAN


def cmd_export_graph(a) -> int:
    report = run_campaign(_config(a, thresholds=(), time_bounds={}, lasso=True))
    text = report.graph.export()
    if a.out:
        Path(a.out).write_text(text)
        print(f"{len(report.graph)} states, {report.graph.edge_count} transitions, "
              f"{len(report.lassos)} hot lassos -> {a.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_VIOLATIONS if report.lassos else EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hotstuff-liveness",
                                 description="Twins-style liveness testing of HotStuff variants.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample scenarios into canonical text files")
    g.add_argument("--protocol", "-p", choices=PROTOCOLS, required=True)
    g.add_argument("--count", "-n", type=int, default=1)
    g.add_argument("--rounds", "-r", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--replicas", type=int, default=None)
    g.add_argument("--partitions", type=int, default=2)
    g.add_argument("--leader-law", choices=("uniform", "round_robin"), default="uniform")
    g.add_argument("--delay-injection", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--out", "-o", help="directory; stdout when omitted")
    g.set_defaults(fn=cmd_generate)

    v = sub.add_parser("validate", help="check scenario files")
    v.add_argument("files", nargs="+")
    v.set_defaults(fn=cmd_validate)

    r = sub.add_parser("run", help="run a campaign and print the report")
    _campaign_args(r)
    r.add_argument("--tt", type=int, nargs="+", default=[5], help="temperature thresholds")
    r.add_argument("--bound", action="append", metavar="LABEL=MS",
                   help="time bound; calibrated small/mid/large when omitted")
    r.add_argument("--calibration-runs", type=int, default=20)
    r.add_argument("--no-lasso", action="store_true")
    r.add_argument("--csv", action="store_true", help="print CSV instead of the table")
    r.add_argument("--out", "-o", help="directory for report, verdict index, graph and scenarios")
    r.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-run one scenario with the checkers")
    p.add_argument("file")
    p.add_argument("--tt", type=int, default=5, help="temperature threshold, 0 to disable")
    p.add_argument("--bound", type=int, default=None, help="time bound in ms")
    p.add_argument("--no-lasso", action="store_true")
    p.add_argument("--no-safety", action="store_true")
    p.add_argument("--count-faulty", action="store_true")
    p.add_argument("--graph", help="campaign graph export to search for lassos in")
    p.add_argument("--log", help="write the event log here")
    p.add_argument("--trace", help="write the JSONL trace here")
    p.set_defaults(fn=cmd_replay)

    c = sub.add_parser("calibrate", help="time bounds from failure-free runs")
    c.add_argument("--protocol", "-p", choices=PROTOCOLS, required=True)
    c.add_argument("--rounds", "-r", type=int, default=10)
    c.add_argument("--count", "-n", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--replicas", type=int, default=None)
    c.set_defaults(fn=cmd_calibrate)

    e = sub.add_parser("export-graph", help="run a campaign and write its state transition graph")
    _campaign_args(e)
    e.add_argument("--out", "-o", help="file; stdout when omitted")
    e.set_defaults(fn=cmd_export_graph)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return a.fn(a)
    except (ConfigError, ScenarioError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
