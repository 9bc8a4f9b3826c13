"""Campaigns: many generated scenarios, every checker, one report.

Each scenario is simulated once.  The per-round hot bits are then scanned
for every temperature threshold, the event log for every time bound, and the
state hashes feed the campaign's shared transition graph, which is searched
for hot cycles once all executions are in.

A method's row counts a scenario as flagged when that method reports a
liveness violation.  Safety violations count for a row if they happened no
later than the round at which the method stopped the test (the whole run when
it never fired).  False positives are judged on the final snapshot of the
full execution.
"""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .chain import ConfigError, ProtocolKind
from .monitor import (
    Method,
    StateTransitionGraph,
    TemperatureState,
    Verdict,
    VerdictKind,
    check_safety,
    check_temperature,
    classify_false_positive,
    find_hot_lassos,
    hot_cycle_components,
    is_hot,
    time_bound_check,
)
from .scenarios import GeneratorConfig, Scenario, canonical_partition, dumps, generate, twin_instances
from .simnet import simulate

CSV_HEADER = ("method", "threshold", "runtime_ms", "trace_len", "pct_safety", "pct_liveness", "pct_false_pos")
BOUND_LABELS = ("small", "mid", "large")


# -- calibration ----------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    mean: float
    std: float
    samples: int

    @property
    def bounds(self) -> dict:
        return {
            "small": round(self.mean),
            "mid": round(self.mean + self.std),
            "large": round(self.mean + 2 * self.std),
        }


def longest_quiet_gap(execution) -> int:
    """Longest stretch of simulated time in which no correct replica executed anything."""
    times = sorted({e.time for e in execution.executed()})
    edges = [0, *times, execution.end_time]
    return max(b - a for a, b in zip(edges, edges[1:]))


def failure_free(kind, rounds: int, seed: int, n: Optional[int] = None, f: int = 1) -> Scenario:
    """Everyone in one partition, no delay overrides, uniformly drawn leaders."""
    gcfg = GeneratorConfig.for_kind(kind, rounds=rounds, f=f, **({"n": n} if n else {}))
    s = generate(gcfg, seed)
    everyone = canonical_partition([twin_instances(s.config.n, s.twin_index)])
    s.partitions = {r: everyone for r in range(1, rounds + 1)}
    s.delays = []
    s.name = "failure-free"
    return s


def calibrate(kind, rounds: int = 10, count: int = 50, seed: int = 0, n: Optional[int] = None) -> Calibration:
    """Time-bound calibration over failure-free runs, in simulated milliseconds."""
    gaps = [longest_quiet_gap(simulate(failure_free(kind, rounds, seed + i, n))) for i in range(count)]
    std = statistics.pstdev(gaps) if len(gaps) > 1 else 0.0
    return Calibration(float(statistics.fmean(gaps)), float(std), len(gaps))


# -- one scenario -------------------------------------------------------------


@dataclass
class ScenarioResult:
    seed: int
    name: str = ""
    rounds: int = 0
    failed: Optional[str] = None
    hashes: list = field(default_factory=list)
    hot: list = field(default_factory=list)
    transitions: list = field(default_factory=list)  # (src, src_hot, dst, dst_hot)
    temperature: dict = field(default_factory=dict)  # TT -> verdict round or None
    time_bound: dict = field(default_factory=dict)  # label -> verdict round or None
    safety_round: Optional[int] = None
    false_positive: bool = True
    sim_ms: float = 0.0
    check_ms: dict = field(default_factory=dict)  # method label -> ms


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, (time.perf_counter() - t0) * 1000


def evaluate(scenario: Scenario, thresholds=(5,), bounds: Optional[dict] = None, count_faulty: bool = False) -> ScenarioResult:
    res = ScenarioResult(scenario.seed, scenario.name, scenario.rounds)
    try:
        ex, res.sim_ms = _timed(simulate, scenario)
    except Exception as exc:  # a broken scenario must not stop the campaign
        res.failed = f"{type(exc).__name__}: {exc}"
        return res
    cfg, store = scenario.config, ex.store
    t0 = time.perf_counter()
    hot_of = lambda s: is_hot(s, store, cfg, count_faulty=count_faulty)
    prev, prev_hot = ex.initial, hot_of(ex.initial)
    for st in ex.states:
        h = hot_of(st)
        res.hashes.append(st.state_hash)
        res.hot.append(h)
        res.transitions.append((prev.state_hash, prev_hot, st.state_hash, h))
        prev, prev_hot = st, h
    hot_ms = (time.perf_counter() - t0) * 1000
    for tt in thresholds:
        t0 = time.perf_counter()
        temp, fired = TemperatureState(0, tt), None
        for i, (st, h) in enumerate(zip(ex.states, res.hot), 1):
            temp, verdict = check_temperature(st, res.hashes[:i], temp, hot=h)
            if verdict is not None:
                fired = verdict.round
                break
        res.temperature[tt] = fired
        res.check_ms[f"temperature:{tt}"] = hot_ms + (time.perf_counter() - t0) * 1000
    res.check_ms["lasso"] = hot_ms
    for label, bound in (bounds or {}).items():
        verdict, ms = _timed(time_bound_check, ex, bound)
        res.time_bound[label] = verdict.round if verdict else None
        res.check_ms[f"timebound:{label}"] = ms
    safety, _ = _timed(check_safety, ex)
    res.safety_round = safety.round if safety else None
    res.false_positive = classify_false_positive(ex)
    return res


def _evaluate_seed(args) -> ScenarioResult:
    gcfg, seed, thresholds, bounds, count_faulty = args
    return evaluate(generate(gcfg, seed), thresholds, bounds, count_faulty)


# -- campaign -----------------------------------------------------------------


@dataclass
class CampaignConfig:
    kind: ProtocolKind
    scenario_count: int = 100
    rounds: int = 10
    thresholds: tuple = (5,)
    time_bounds: Optional[dict] = None  # label -> ms; None calibrates
    lasso: bool = True
    workers: int = 1
    master_seed: int = 0
    out_dir: Optional[str] = None
    delay_injection: Optional[bool] = None  # defaults to on for Sync HotStuff
    n: Optional[int] = None
    f: int = 1
    count_faulty: bool = False
    calibration_runs: int = 20
    extra: tuple = ()  # fixed scenarios evaluated after the generated ones

    def __post_init__(self):
        self.kind = ProtocolKind(self.kind)
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.scenario_count < 1:
            raise ConfigError("scenario_count must be >= 1")
        if any(tt < 1 for tt in self.thresholds):
            raise ConfigError("temperature thresholds must be positive")
        if self.time_bounds and any(b <= 0 for b in self.time_bounds.values()):
            raise ConfigError("time bounds must be positive")
        if self.delay_injection is None:
            self.delay_injection = self.kind is ProtocolKind.SYNC

    def generator(self) -> GeneratorConfig:
        kw = {"n": self.n} if self.n else {}
        return GeneratorConfig.for_kind(self.kind, rounds=self.rounds, f=self.f,
                                        delay_injection=self.delay_injection, **kw)

    def seeds(self) -> list:
        return list(range(self.master_seed, self.master_seed + self.scenario_count))


@dataclass
class ReportRow:
    method: str
    threshold: str
    runtime_ms: float
    trace_len: Optional[float]
    pct_safety: float
    pct_liveness: float
    pct_false_pos: float
    flagged: list = field(default_factory=list)  # scenario keys, see scenario_key

    def csv_fields(self) -> list:
        tl = "" if self.trace_len is None else f"{self.trace_len:.2f}"
        return [self.method, self.threshold, f"{self.runtime_ms:.1f}", tl,
                f"{self.pct_safety:.2f}", f"{self.pct_liveness:.2f}", f"{self.pct_false_pos:.2f}"]


@dataclass
class CampaignReport:
    config: CampaignConfig
    rows: list
    results: list  # ScenarioResult, in seed order
    graph: StateTransitionGraph
    lassos: list  # Verdict
    bounds: dict
    calibration: Optional[Calibration] = None
    wall_ms: float = 0.0

    @property
    def failed(self) -> list:
        return [(r.seed, r.failed) for r in self.results if r.failed]

    def row(self, method: str, threshold="-") -> ReportRow:
        for r in self.rows:
            if r.method == method and r.threshold == str(threshold):
                return r
        raise KeyError((method, threshold))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def to_table(self) -> str:
        head = ["Method", "Threshold", "Time (ms)", "Trace length", "% Safety", "% Liveness", "% False pos."]
        body = [r.csv_fields() for r in self.rows]
        for b in body:
            b[3] = b[3] or "-"
        widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
        fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
        lines = [f"{self.config.kind.value}: {len(self.results)} scenarios, {self.config.rounds} rounds"]
        lines += [fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
        if self.failed:
            lines.append(f"failed scenarios: {', '.join(str(s) for s, _ in self.failed)}")
        return "\n".join(lines) + "\n"

    def verdict_index(self) -> list:
        """One record per (scenario, method) verdict; enough to replay each one."""
        out = []
        for r in self.results:
            if r.failed:
                out.append({"seed": r.seed, "scenario": scenario_key(r), "method": "failed", "error": r.failed})
                continue
            start = len(out)
            for tt, rnd in sorted(r.temperature.items()):
                if rnd is not None:
                    out.append({"seed": r.seed, "method": "Temperature", "threshold": tt, "round": rnd,
                                "false_positive": r.false_positive})
            rnd = self._lasso_round(r)
            if rnd is not None:
                out.append({"seed": r.seed, "method": "Lasso", "round": rnd, "false_positive": r.false_positive})
            for label, rnd in sorted(r.time_bound.items()):
                if rnd is not None:
                    out.append({"seed": r.seed, "method": "TimeBound", "threshold": label,
                                "bound_ms": self.bounds[label], "round": rnd,
                                "false_positive": r.false_positive})
            if r.safety_round is not None:
                out.append({"seed": r.seed, "method": "Agreement", "round": r.safety_round})
            for v in out[start:]:
                v["scenario"] = scenario_key(r)
        return out

    def true_violations(self) -> int:
        """Scenarios with a safety verdict or a liveness verdict that is not a false positive."""
        flagged = {v["scenario"] for v in self.verdict_index()
                   if v["method"] == "Agreement" or v.get("false_positive") is False}
        return len(flagged)

    _cycle_states: frozenset = frozenset()

    def _lasso_round(self, r: ScenarioResult) -> Optional[int]:
        if not self.config.lasso:
            return None
        for i, h in enumerate(r.hashes, 1):
            if h in self._cycle_states:
                return i
        return None

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "scenarios").mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv())
        (out / "report.txt").write_text(self.to_table())
        index = self.verdict_index()
        (out / "verdicts.jsonl").write_text("".join(json.dumps(v, sort_keys=True) + "\n" for v in index))
        (out / "graph.txt").write_text(self.graph.export())
        (out / "lassos.jsonl").write_text(
            "".join(json.dumps(v.record(), sort_keys=True) + "\n" for v in self.lassos))
        gcfg = self.config.generator()
        extra = {scenario_key(s): s for s in self.config.extra}
        for key in sorted({v["scenario"] for v in index}):
            s = extra.get(key) or generate(gcfg, int(key.split("-", 1)[1]))
            (out / "scenarios" / f"{key}.scn").write_text(dumps(s))
        return out


def scenario_key(r) -> str:
    """File stem for a scenario: its name for fixtures, ``seed-N`` for generated ones."""
    return r.name or f"seed-{r.seed}"


def _pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


def _row(method: str, threshold, results: list, stop_round, extra_ms: float, check_key: str) -> ReportRow:
    done = [r for r in results if not r.failed]
    flagged = [r for r in done if stop_round(r) is not None]
    safety = 0
    for r in done:
        stop = stop_round(r)
        if r.safety_round is not None and (stop is None or r.safety_round <= stop):
            safety += 1
    fps = sum(1 for r in flagged if r.false_positive)
    runtime = sum(r.sim_ms + r.check_ms.get(check_key, 0.0) for r in done) + extra_ms
    trace = statistics.fmean(stop_round(r) for r in flagged) if flagged else None
    return ReportRow(method, str(threshold), runtime, trace, _pct(safety, len(done)),
                     _pct(len(flagged), len(done)), _pct(fps, len(flagged)), [scenario_key(r) for r in flagged])


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    t_start = time.perf_counter()
    calibration = None
    bounds = dict(cfg.time_bounds) if cfg.time_bounds is not None else None
    if bounds is None:
        calibration = calibrate(cfg.kind, cfg.rounds, cfg.calibration_runs, n=cfg.n)
        bounds = calibration.bounds
    gcfg = cfg.generator()
    jobs = [(gcfg, seed, tuple(cfg.thresholds), bounds, cfg.count_faulty) for seed in cfg.seeds()]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_evaluate_seed, jobs, chunksize=max(1, len(jobs) // (cfg.workers * 8))))
    else:
        results = [_evaluate_seed(job) for job in jobs]
    results += [evaluate(s, tuple(cfg.thresholds), bounds, cfg.count_faulty) for s in cfg.extra]

    # single writer: merge every execution into the shared graph
    graph = StateTransitionGraph()
    t0 = time.perf_counter()
    for r in results:
        graph.merge(r.transitions)
    lassos, cycle_states = [], frozenset()
    if cfg.lasso:
        lassos = find_hot_lassos(graph)
        comps = hot_cycle_components(graph)
        cycle_states = frozenset().union(*comps) if comps else frozenset()
    lasso_ms = (time.perf_counter() - t0) * 1000

    report = CampaignReport(cfg, [], results, graph, lassos, bounds, calibration)
    report._cycle_states = cycle_states
    rows = []
    for tt in cfg.thresholds:
        rows.append(_row("Temperature", tt, results, lambda r, tt=tt: r.temperature.get(tt), 0.0,
                         f"temperature:{tt}"))
    if cfg.lasso:
        rows.append(_row("Lasso", "-", results, report._lasso_round, lasso_ms, "lasso"))
    for label in BOUND_LABELS + tuple(k for k in bounds if k not in BOUND_LABELS):
        if label in bounds:
            rows.append(_row(f"TimeBound-{label}", bounds[label], results,
                             lambda r, label=label: r.time_bound.get(label), 0.0, f"timebound:{label}"))
    report.rows = rows
    report.wall_ms = (time.perf_counter() - t_start) * 1000
    if cfg.out_dir:
        report.write(cfg.out_dir)
    return report


# -- replay -------------------------------------------------------------------


@dataclass
class ReplayResult:
    execution: object
    verdicts: list
    hot: list

    def render(self) -> str:
        ex = self.execution
        lines = [f"scenario {ex.scenario.name or ex.scenario.seed} ({ex.scenario.kind.value}, "
                 f"{ex.scenario.rounds} rounds)"]
        for b, st, h in zip(ex.boundaries, ex.states, self.hot):
            cells = " ".join(f"{p}={s.prepared[:8]}/{s.lock[:8]}/{s.exec[:8]}" for p, s in sorted(b.snapshots.items()))
            flag = "hot" if h else ("exec" if st.fresh_exec else "-")
            lines.append(f"round {b.round:>3} t={b.time:<6} {flag:<4} {st.state_hash[:12]} {cells}")
        for v in sorted(self.verdicts, key=lambda v: (v.round or 0, v.method.value)):
            extra = f" witness={','.join(h[:12] for h in v.witness)}" if v.witness else ""
            lines.append(f"verdict round {v.round}: {v.kind.value} by {v.method.value}{extra}"
                         + (f" ({v.detail})" if v.detail else ""))
        if not self.verdicts:
            lines.append("no verdicts")
        return "\n".join(lines) + "\n"


def replay(scenario: Scenario, temperature: Optional[int] = 5, lasso: bool = True,
           time_bound: Optional[int] = None, safety: bool = True, count_faulty: bool = False,
           graph: Optional[StateTransitionGraph] = None) -> ReplayResult:
    """Re-run one scenario deterministically with the selected checkers.

    Lasso detection searches this execution's own transitions, merged into
    ``graph`` when a campaign's exported graph is given, so a lasso found by a
    campaign is found again on replay.
    """
    ex = simulate(scenario)
    store, cfg = ex.store, scenario.config
    hot = [is_hot(st, store, cfg, count_faulty=count_faulty) for st in ex.states]
    verdicts = []
    if temperature:
        temp = TemperatureState(0, temperature)
        for i, (st, h) in enumerate(zip(ex.states, hot), 1):
            temp, v = check_temperature(st, ex.states[:i], temp, hot=h)
            if v is not None:
                v.seed = scenario.seed
                verdicts.append(v)
                break
    if lasso:
        g = StateTransitionGraph.parse(graph.export()) if graph is not None else StateTransitionGraph()
        prev = ex.initial
        prev_hot = is_hot(prev, store, cfg, count_faulty=count_faulty)
        for st, h in zip(ex.states, hot):
            g.add_transition(prev.state_hash, prev_hot, st.state_hash, h, prev, st)
            prev, prev_hot = st, h
        v = first_lasso_hit(g, [st.state_hash for st in ex.states])
        if v is not None:
            v.seed = scenario.seed
            verdicts.append(v)
    if time_bound:
        v = time_bound_check(ex, time_bound)
        if v is not None:
            verdicts.append(v)
    if safety:
        v = check_safety(ex)
        if v is not None:
            verdicts.append(v)
    return ReplayResult(ex, verdicts, hot)


def first_lasso_hit(g: StateTransitionGraph, hashes: list) -> Optional[Verdict]:
    """Lasso verdict for a trace: the first round whose state lies on a hot cycle of ``g``."""
    comps = hot_cycle_components(g)
    for i, h in enumerate(hashes, 1):
        for comp in comps:
            if h in comp:
                witness = next(v.witness for v in find_hot_lassos(g) if set(v.witness) <= comp)
                return Verdict(VerdictKind.LIVENESS, Method.LASSO, list(hashes), witness=witness, round=i)
    return None
