"""Seeded discrete-event simulation of one scenario.

Time is integer milliseconds.  Events are ordered by ``(time, scheduling
sequence number)``, which makes every run a deterministic total order.

Each instance owns its view.  A message belongs to the view it was sent in,
and the partition and delay rules of the scenario round with that number
decide whether and when it arrives.  Messages for a view the recipient has
not reached yet are buffered; messages for a view it already left are stale
and dropped.

Round ``r`` ends once every instance has left view ``r``; at that moment all
replicas are snapshotted.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Optional

from .chain import BlockStore, ProcessId, ProtocolKind
from .monitor import PartialProcessState, PartialSystemState, initial_state
from .protocols import EventKind, ReplicaEvent, ReplicaState, Step, make_protocol
from .scenarios import NetworkRule, Scenario, twin_instances

_DELIVER, _TIMER, _VIEW_TIMEOUT, _ENTER = range(4)


class SimClock:
    def __init__(self):
        self.now = 0

    def advance(self, t: int):
        if t < self.now:
            raise RuntimeError(f"clock moving backwards: {t} < {self.now}")
        self.now = t


@dataclass(frozen=True)
class LogRecord:
    time: int
    replica: ProcessId
    kind: EventKind
    view: int
    block: Optional[str] = None

    def line(self) -> str:
        return f"{self.time}\t{self.replica}\t{self.kind.value}\t{self.view}\t{self.block or '-'}"


@dataclass
class RoundBoundary:
    round: int
    time: int
    snapshots: dict  # ProcessId -> PartialProcessState, every live instance
    stalled: bool


@dataclass
class Execution:
    scenario: Scenario
    store: BlockStore
    instances: list
    correct: list
    log: list = field(default_factory=list)
    boundaries: list = field(default_factory=list)
    states: list = field(default_factory=list)  # PartialSystemState per round
    initial: Optional[PartialSystemState] = None
    deliveries: list = field(default_factory=list)  # (time, sender, recipient, kind, view)
    drops: int = 0
    stale: int = 0
    end_time: int = 0
    replicas: dict = field(default_factory=dict)

    def executed(self, correct_only: bool = True) -> list:
        keep = set(self.correct) if correct_only else set(self.instances)
        return [e for e in self.log if e.kind is EventKind.EXECUTED and e.replica in keep]

    def event_log(self) -> str:
        return "".join(rec.line() + "\n" for rec in self.log)

    def dump(self) -> str:
        """Line-delimited JSON trace: every event record, then every round snapshot."""
        out = []
        for rec in self.log:
            out.append({"type": "event", "time": rec.time, "replica": str(rec.replica),
                        "kind": rec.kind.value, "view": rec.view, "block": rec.block})
        for b, st in zip(self.boundaries, self.states):
            out.append({
                "type": "snapshot", "round": b.round, "time": b.time, "stalled": b.stalled,
                "state_hash": st.state_hash, "fresh_exec": st.fresh_exec,
                "replicas": {str(p): [s.prepared, s.lock, s.exec] for p, s in sorted(b.snapshots.items())},
            })
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in out)


def instantiate_twins(config, twin_index: int) -> list:
    return twin_instances(config.n, twin_index)


def deliver(msg, recipient: ProcessId, rule: NetworkRule, clock: SimClock, base_delay: int,
            delta_ms: int) -> Optional[int]:
    """Delivery time of ``msg`` at ``recipient`` under ``rule``, or None when dropped."""
    if not rule.same_side(msg.sender, recipient):
        return None
    extra = 0 if recipient == msg.sender else rule.extra_units(msg.sender, recipient, msg.kind)
    return clock.now + base_delay + extra * delta_ms // 2


class Simulation:
    def __init__(self, scenario: Scenario, record_deliveries: bool = False):
        self.scenario = scenario
        self.config = scenario.config
        self.proto = make_protocol(scenario.config, scenario.delta_ms)
        self.store = BlockStore()
        self.clock = SimClock()
        self.instances = scenario.instances()
        self.correct = [p for p in self.instances if p.index != scenario.twin_index]
        self.states = {p: self.proto.initial_state(p) for p in self.instances}
        self.future = {p: [] for p in self.instances}

        self._queue = []
        self._seq = 0
        self._rules = {r: scenario.rule(r) for r in range(1, scenario.rounds + 1)}
        self._record = record_deliveries
        self.execution = Execution(scenario, self.store, self.instances, self.correct,
                                   replicas=self.states)
        self.execution.initial = initial_state(self.correct)
        self._round = 1
        self._exec_since_boundary = False
        self._started = False

    # -- plumbing ------------------------------------------------------------

    def _push(self, t: int, kind: int, *payload):
        heapq.heappush(self._queue, (t, self._seq, kind, payload))
        self._seq += 1

    def _idle(self, p: ProcessId) -> bool:
        return self.states[p].view > self.scenario.rounds

    def _apply(self, p: ProcessId, step: Step):
        self.states[p] = step.state
        now = self.clock.now
        for ev in step.events:
            self._log(p, ev)
            if ev.kind is EventKind.QUIT_VIEW:
                self._push(now, _ENTER, p, ev.view + 1)
        for msg in step.outbound:
            self._route(msg)
        for req in step.timers:
            self._push(req.at, _TIMER, p, req.timer)

    def _log(self, p: ProcessId, ev: ReplicaEvent):
        self.execution.log.append(LogRecord(ev.time, p, ev.kind, ev.view, ev.block))
        if ev.kind is EventKind.EXECUTED and p.index != self.scenario.twin_index:
            self._exec_since_boundary = True

    def _route(self, msg):
        rule = self._rules.get(msg.view)
        if rule is None:
            return
        if msg.recipient is None:
            targets = self.instances
        else:
            targets = [p for p in self.instances if p.index == msg.recipient]
        for p in targets:
            at = deliver(msg, p, rule, self.clock, self.scenario.base_delay_ms, self.scenario.delta_ms)
            if at is None:
                self.execution.drops += 1
            else:
                self._push(at, _DELIVER, p, msg)

    def _timeout(self, p: ProcessId) -> int:
        return self.scenario.view_timeout_ms

    def _enter(self, p: ProcessId, view: int):
        if self.states[p].view >= view:
            return
        now = self.clock.now
        if view > self.scenario.rounds:
            s = self.states[p].clone()
            s.view = view
            self.states[p] = s
            return
        leader = self.scenario.leaders[view]
        self._apply(p, self.proto.enter_view(self.states[p], view, leader, now, self.store))
        self._push(now + self._timeout(p), _VIEW_TIMEOUT, p, view)
        pending, self.future[p] = self.future[p], []
        for msg in pending:
            self._on_deliver(p, msg)

    def _on_deliver(self, p: ProcessId, msg):
        state = self.states[p]
        if self._idle(p):
            return
        if msg.view > state.view:
            self.future[p].append(msg)
            return
        if msg.view < state.view:
            self.execution.stale += 1
            return
        if self._record:
            self.execution.deliveries.append((self.clock.now, msg.sender, p, msg.kind, msg.view))
        self._apply(p, self.proto.handle_message(state, msg, self.clock.now, self.store))

    def _dispatch(self, kind: int, payload):
        if kind == _DELIVER:
            self._on_deliver(*payload)
        elif kind == _ENTER:
            self._enter(*payload)
        elif kind == _TIMER:
            p, timer = payload
            if not self._idle(p):
                self._apply(p, self.proto.on_timer(self.states[p], timer, self.clock.now, self.store))
        elif kind == _VIEW_TIMEOUT:
            p, view = payload
            if self.states[p].view == view:
                self._log(p, ReplicaEvent(EventKind.QUIT_VIEW, view, self.clock.now))
                self._enter(p, view + 1)

    # -- rounds --------------------------------------------------------------

    def _snapshot(self) -> tuple:
        snaps = {
            p: PartialProcessState(s.b_prepared, s.b_lock, s.b_exec) for p, s in self.states.items()
        }
        boundary = RoundBoundary(self._round, self.clock.now, snaps, stalled=not self._exec_since_boundary)
        system = PartialSystemState.of({p: snaps[p] for p in self.correct}, self._exec_since_boundary)
        self.execution.boundaries.append(boundary)
        self.execution.states.append(system)
        self.execution.end_time = self.clock.now
        self._exec_since_boundary = False
        self._round += 1
        return boundary, system

    def _round_done(self, r: int) -> bool:
        return all(s.view > r for s in self.states.values())

    def start(self):
        if not self._started:
            self._started = True
            for p in self.instances:
                self._enter(p, 1)

    def run_round(self, round_idx: int) -> tuple:
        """Process events until round ``round_idx`` is over, then snapshot."""
        if round_idx != self._round:
            raise RuntimeError(f"round {round_idx} requested, next round is {self._round}")
        self.start()
        while self._queue:
            if self._round_done(round_idx) and self._queue[0][0] > self.clock.now:
                break
            t, _, kind, payload = heapq.heappop(self._queue)
            self.clock.advance(t)
            self._dispatch(kind, payload)
        # an exhausted queue leaves the round stalled; the snapshot is taken regardless
        return self._snapshot()

    def run(self) -> Execution:
        while self._round <= self.scenario.rounds:
            self.run_round(self._round)
        return self.execution


def run_round(sim: Simulation, round_idx: int) -> tuple:
    return sim.run_round(round_idx)


def simulate(scenario: Scenario, record_deliveries: bool = False) -> Execution:
    return Simulation(scenario, record_deliveries).run()
