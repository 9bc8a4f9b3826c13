"""Twins-style scenarios: leaders, partitions, one twinned identity, delays.

A scenario is a replayable test case.  Its canonical text form is a flat list
of ``key = value`` lines in a fixed order, so fixture files diff cleanly::

    kind = 2phase
    n = 4
    f = 1
    rounds = 10
    twin = 0
    delta_ms = 50
    base_delay_ms = 10
    view_timeout_ms = 100
    leader_law = uniform
    seed = 0
    leader.1 = 0
    partition.1 = 0A,2,3 | 0B,1
    delay.1 = 0A>3 QCAnnounce 4

A delay line reads ``<round> = <sender>><recipient or *> <kind> <units>``;
units are half-deltas.
"""
from __future__ import annotations

import functools
import random
from dataclasses import dataclass, field
from typing import Optional

from .chain import ConfigError, MsgKind, ProcessId, ProtocolConfig, ProtocolKind

PROPOSE_DELAY_UNITS = tuple(range(7))  # 0 .. 3 deltas in half-delta steps
VOTE_DELAY_UNITS = tuple(range(5))  # 0 .. 2 deltas
VOTE_KINDS = frozenset({MsgKind.VOTE_PREPARE, MsgKind.VOTE_PRECOMMIT, MsgKind.VOTE_COMMIT})

DEFAULT_BASE_DELAY = {ProtocolKind.HOTSTUFF: 10, ProtocolKind.TWO_PHASE: 10, ProtocolKind.SYNC: 0}
DEFAULT_DELTA_MS = 50


def default_view_timeout(kind: ProtocolKind, delta_ms: int = DEFAULT_DELTA_MS) -> int:
    if ProtocolKind(kind) is ProtocolKind.SYNC:
        return 10 * delta_ms
    return 100


class ScenarioError(ValueError):
    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(self.findings))


@dataclass(frozen=True)
class DelayOverride:
    round: int
    sender: ProcessId
    kind: MsgKind
    units: int  # half-deltas
    recipient: Optional[int] = None  # None: every recipient

    def line(self) -> str:
        to = "*" if self.recipient is None else str(self.recipient)
        return f"{self.sender}>{to} {self.kind.value} {self.units}"


@dataclass(frozen=True)
class NetworkRule:
    round: int
    partitions: tuple  # tuple of frozensets of ProcessId
    delay_overrides: dict = field(default_factory=dict)  # (sender, recipient index|None, kind) -> units

    def same_side(self, a: ProcessId, b: ProcessId) -> bool:
        for part in self.partitions:
            if a in part:
                return b in part
        return False

    def extra_units(self, sender: ProcessId, recipient: ProcessId, kind: MsgKind) -> int:
        d = self.delay_overrides
        if not d:
            return 0
        hit = d.get((sender, recipient.index, kind))
        if hit is None:
            hit = d.get((sender, None, kind), 0)
        return hit


@dataclass
class Scenario:
    config: ProtocolConfig
    rounds: int
    leaders: dict  # round -> process index
    partitions: dict  # round -> tuple of frozensets of ProcessId
    twin_index: int
    delays: list = field(default_factory=list)  # DelayOverride
    seed: int = 0
    delta_ms: int = DEFAULT_DELTA_MS
    base_delay_ms: Optional[int] = None
    view_timeout_ms: Optional[int] = None
    leader_law: str = "uniform"
    name: str = ""

    def __post_init__(self):
        if self.base_delay_ms is None:
            self.base_delay_ms = DEFAULT_BASE_DELAY[self.config.kind]
        if self.view_timeout_ms is None:
            self.view_timeout_ms = default_view_timeout(self.config.kind, self.delta_ms)

    @property
    def kind(self) -> ProtocolKind:
        return self.config.kind

    def instances(self) -> list:
        return twin_instances(self.config.n, self.twin_index)

    def rule(self, round_idx: int) -> NetworkRule:
        overrides = {}
        for d in self.delays:
            if d.round == round_idx:
                overrides[(d.sender, d.recipient, d.kind)] = d.units
        return NetworkRule(round_idx, tuple(self.partitions.get(round_idx, ())), overrides)

    def to_text(self) -> str:
        return dumps(self)


def twin_instances(n: int, twin_index: int) -> list:
    """n-1 singletons plus two instances sharing ``twin_index``."""
    if not 0 <= twin_index < n:
        raise ConfigError(f"twin index {twin_index} out of range for n={n}")
    out = []
    for i in range(n):
        if i == twin_index:
            out += [ProcessId(i, "A"), ProcessId(i, "B")]
        else:
            out.append(ProcessId(i))
    return out


@dataclass(frozen=True)
class GeneratorConfig:
    n: int = 4
    f: int = 1
    kind: ProtocolKind = ProtocolKind.HOTSTUFF
    rounds: int = 10
    partitions_per_round: int = 2
    delay_injection: bool = False
    scenario_count: int = 1
    leader_law: str = "uniform"
    delta_ms: int = DEFAULT_DELTA_MS

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        ProtocolConfig(self.n, self.f, self.kind)
        if self.delay_injection and self.kind is not ProtocolKind.SYNC:
            raise ConfigError("delay injection is only defined for Sync HotStuff")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 1 <= self.partitions_per_round <= self.n + 1:
            raise ConfigError("partitions_per_round must be between 1 and the instance count")
        if self.leader_law not in ("uniform", "round_robin"):
            raise ConfigError(f"unknown leader law {self.leader_law!r}")

    @classmethod
    def for_kind(cls, kind, **kw) -> "GeneratorConfig":
        kind = ProtocolKind(kind)
        if kind is ProtocolKind.SYNC:
            kw.setdefault("n", 3)
            kw.setdefault("f", 1)
        return cls(kind=kind, **kw)


@functools.lru_cache(maxsize=None)
def set_partitions(items: tuple, parts: int) -> tuple:
    """Every way of splitting ``items`` into ``parts`` non-empty blocks, in a fixed order."""
    from sympy.utilities.iterables import multiset_partitions

    return tuple(canonical_partition(p) for p in multiset_partitions(list(items), parts))


def _split(rng: random.Random, items: list, parts: int) -> tuple:
    # uniform over set partitions, as an exhaustive Twins enumeration would weigh them
    return rng.choice(set_partitions(tuple(sorted(items)), parts))


def generate(gcfg: GeneratorConfig, seed: int) -> Scenario:
    """Sample one scenario; a pure function of ``(gcfg, seed)``."""
    rng = random.Random(seed)
    config = ProtocolConfig(gcfg.n, gcfg.f, gcfg.kind)
    twin = rng.randrange(gcfg.n)
    insts = twin_instances(gcfg.n, twin)
    leaders, partitions, delays = {}, {}, []
    for r in range(1, gcfg.rounds + 1):
        if gcfg.leader_law == "uniform":
            leaders[r] = rng.randrange(gcfg.n)
        else:
            leaders[r] = (r - 1) % gcfg.n
        partitions[r] = canonical_partition(_split(rng, insts, gcfg.partitions_per_round))
        if gcfg.delay_injection:
            for sender in insts:
                delays.append(DelayOverride(r, sender, MsgKind.PROPOSE, rng.choice(PROPOSE_DELAY_UNITS)))
                delays.append(DelayOverride(r, sender, MsgKind.VOTE_PREPARE, rng.choice(VOTE_DELAY_UNITS)))
    return Scenario(
        config=config,
        rounds=gcfg.rounds,
        leaders=leaders,
        partitions=partitions,
        twin_index=twin,
        delays=delays,
        seed=seed,
        delta_ms=gcfg.delta_ms,
        leader_law=gcfg.leader_law,
    )


def canonical_partition(parts) -> tuple:
    return tuple(sorted((frozenset(p) for p in parts), key=lambda p: sorted(p)))


# Process names P1..P4 of the classic 2-Phase deadlock mapped onto 0-based indices.
DEADLOCK_PROCESSES = {"P1": 0, "P2": 1, "P3": 2, "P4": 3}


def fixture_deadlock(silent_rounds: int = 8) -> Scenario:
    """The 2-Phase HotStuff deadlock: P1 is the twinned faulty process.

    Round 1: twin 1A leads, reaches only P3/P4, and its certificate to P4 is
    held back past the view timer, so P3 alone locks on B1.
    Round 2: P2 leads; P3's new-view report and P2's certificates to P3 are
    held back, so P2 and P4 lock (and execute) B2 while P3 keeps B1.
    Afterwards both twin instances are cut off and the leader rotates over
    the correct processes, none of which can collect identical reports.
    """
    p1, p2, p3, p4 = (DEADLOCK_PROCESSES[k] for k in ("P1", "P2", "P3", "P4"))
    a, b = ProcessId(p1, "A"), ProcessId(p1, "B")
    P2, P3, P4 = ProcessId(p2), ProcessId(p3), ProcessId(p4)
    held = 4  # half-deltas; 10 + 100 ms outlasts the 100 ms view timer
    rounds = 2 + silent_rounds
    leaders = {1: p1, 2: p2}
    partitions = {
        1: canonical_partition([{a, P3, P4}, {b, P2}]),
        2: canonical_partition([{a}, {b, P2, P3, P4}]),
    }
    rotation = (p3, p4, p2)
    for r in range(3, rounds + 1):
        leaders[r] = rotation[(r - 3) % 3]
        partitions[r] = canonical_partition([{a, b}, {P2, P3, P4}])
    delays = [
        DelayOverride(1, a, MsgKind.QC_ANNOUNCE, held, p4),
        DelayOverride(2, P3, MsgKind.NEW_VIEW, held, p2),
        DelayOverride(2, P2, MsgKind.QC_ANNOUNCE, held, p3),
    ]
    return Scenario(
        config=ProtocolConfig(4, 1, ProtocolKind.TWO_PHASE),
        rounds=rounds,
        leaders=leaders,
        partitions=partitions,
        twin_index=p1,
        delays=delays,
        seed=0,
        name="deadlock",
    )


def with_kind(s: Scenario, kind) -> Scenario:
    """The same adversary schedule replayed on another protocol variant."""
    kind = ProtocolKind(kind)
    return Scenario(
        config=ProtocolConfig(s.config.n, s.config.f, kind),
        rounds=s.rounds,
        leaders=dict(s.leaders),
        partitions=dict(s.partitions),
        twin_index=s.twin_index,
        delays=list(s.delays),
        seed=s.seed,
        delta_ms=s.delta_ms,
        base_delay_ms=s.base_delay_ms if kind is not ProtocolKind.SYNC else None,
        view_timeout_ms=s.view_timeout_ms if kind is not ProtocolKind.SYNC else None,
        leader_law=s.leader_law,
        name=s.name,
    )


def validate(s: Scenario) -> list:
    """Every violated scenario constraint, as human-readable findings."""
    findings = []
    cfg = s.config
    if s.rounds < 1:
        findings.append("rounds must be >= 1")
    if not 0 <= s.twin_index < cfg.n:
        findings.append(f"twin index {s.twin_index} out of range")
        return findings
    insts = set(s.instances())
    for r in range(1, s.rounds + 1):
        if r not in s.leaders:
            findings.append(f"leader schedule missing round {r}")
        elif not 0 <= s.leaders[r] < cfg.n:
            findings.append(f"round {r}: leader {s.leaders[r]} out of range")
        parts = s.partitions.get(r)
        if parts is None:
            findings.append(f"partition schedule missing round {r}")
            continue
        seen = set()
        for p in parts:
            if not p:
                findings.append(f"round {r}: empty partition")
            if seen & p:
                findings.append(f"round {r}: partitions overlap on {sorted(map(str, seen & p))}")
            seen |= p
        if seen - insts:
            findings.append(f"round {r}: unknown instances {sorted(map(str, seen - insts))}")
        if insts - seen:
            findings.append(f"round {r}: instances not covered {sorted(map(str, insts - seen))}")
    extra = sorted(set(s.leaders) | set(s.partitions))
    for r in extra:
        if not 1 <= r <= s.rounds:
            findings.append(f"schedule entry for round {r} outside 1..{s.rounds}")
    for d in s.delays:
        if not 1 <= d.round <= s.rounds:
            findings.append(f"delay for round {d.round} outside 1..{s.rounds}")
        if d.sender not in insts:
            findings.append(f"delay sender {d.sender} is not an instance")
        if d.units < 0:
            findings.append(f"negative delay {d.line()}")
        if d.kind is MsgKind.PROPOSE and d.units > PROPOSE_DELAY_UNITS[-1]:
            findings.append(f"round {d.round}: propose delay exceeds blame timer ({d.line()})")
        if d.kind in VOTE_KINDS and d.units > VOTE_DELAY_UNITS[-1]:
            findings.append(f"round {d.round}: vote delay exceeds commit timer ({d.line()})")
    if s.delta_ms <= 0 or s.delta_ms % 2:
        findings.append("delta_ms must be a positive even number of milliseconds")
    if s.view_timeout_ms is not None and s.view_timeout_ms <= 0:
        findings.append("view_timeout_ms must be positive")
    return findings


# -- canonical text -----------------------------------------------------------

_HEADER = ("kind", "n", "f", "rounds", "twin", "delta_ms", "base_delay_ms", "view_timeout_ms",
           "leader_law", "seed", "name")


def _fmt_partition(parts) -> str:
    return " | ".join(",".join(str(p) for p in sorted(part)) for part in canonical_partition(parts))


def dumps(s: Scenario) -> str:
    head = {
        "kind": s.kind.value,
        "n": s.config.n,
        "f": s.config.f,
        "rounds": s.rounds,
        "twin": s.twin_index,
        "delta_ms": s.delta_ms,
        "base_delay_ms": s.base_delay_ms,
        "view_timeout_ms": s.view_timeout_ms,
        "leader_law": s.leader_law,
        "seed": s.seed,
        "name": s.name or "-",
    }
    lines = [f"{k} = {head[k]}" for k in _HEADER]
    for r in sorted(set(s.leaders) | set(s.partitions)):
        if r in s.leaders:
            lines.append(f"leader.{r} = {s.leaders[r]}")
        if r in s.partitions:
            lines.append(f"partition.{r} = {_fmt_partition(s.partitions[r])}")
        for d in sorted((d for d in s.delays if d.round == r),
                        key=lambda d: (d.kind.value, d.sender, -1 if d.recipient is None else d.recipient)):
            lines.append(f"delay.{r} = {d.line()}")
    for d in s.delays:
        if d.round not in s.leaders and d.round not in s.partitions:
            lines.append(f"delay.{d.round} = {d.line()}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Scenario:
    head, leaders, partitions, delays, errors = {}, {}, {}, [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = key.strip(), value.strip()
        try:
            if "." in key:
                what, _, r = key.partition(".")
                r = int(r)
                if what == "leader":
                    leaders[r] = int(value)
                elif what == "partition":
                    partitions[r] = canonical_partition(
                        frozenset(ProcessId.parse(x) for x in part.split(",") if x.strip())
                        for part in value.split("|")
                    )
                elif what == "delay":
                    route, kind, units = value.split()
                    src, _, dst = route.partition(">")
                    delays.append(DelayOverride(r, ProcessId.parse(src), MsgKind(kind), int(units),
                                                None if dst == "*" else int(dst)))
                else:
                    errors.append(f"line {lineno}: unknown key {key!r}")
            elif key in _HEADER:
                head[key] = value
            else:
                errors.append(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
    missing = [k for k in ("kind", "n", "f", "rounds", "twin") if k not in head]
    if missing:
        errors.append(f"missing header keys {missing}")
    if errors:
        raise ScenarioError(errors)
    try:
        config = ProtocolConfig(int(head["n"]), int(head["f"]), ProtocolKind(head["kind"]))
    except ValueError as exc:
        raise ScenarioError([str(exc)]) from None
    return Scenario(
        config=config,
        rounds=int(head["rounds"]),
        leaders=leaders,
        partitions=partitions,
        twin_index=int(head["twin"]),
        delays=delays,
        seed=int(head.get("seed", 0)),
        delta_ms=int(head.get("delta_ms", DEFAULT_DELTA_MS)),
        base_delay_ms=int(head["base_delay_ms"]) if "base_delay_ms" in head else None,
        view_timeout_ms=int(head["view_timeout_ms"]) if "view_timeout_ms" in head else None,
        leader_law=head.get("leader_law", "uniform"),
        name="" if head.get("name", "-") == "-" else head["name"],
    )


def load(path) -> Scenario:
    with open(path) as fh:
        return loads(fh.read())


def save(s: Scenario, path):
    with open(path, "w") as fh:
        fh.write(dumps(s))
