"""Message-driven replica state machines for the three protocol variants.

Every entry point is a pure function of ``(state, input, now)``: the state is
cloned, the clone is updated, and a :class:`Step` carries the new state along
with outbound messages, observable events and timer requests.  The only side
effect is inserting freshly proposed blocks into the execution's shared
:class:`~hotstuff_liveness.chain.BlockStore`, which is idempotent because a
block's digest is a function of its content.

View pacing for the two partially synchronous variants lives in the simulator
(per-replica view timers).  Sync HotStuff drives its own view changes through
blames; the simulator only adds a safety-net cap.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

from .chain import (
    GENESIS,
    BlockStore,
    ConfigError,
    Message,
    MsgKind,
    Phase,
    ProcessId,
    ProtocolConfig,
    ProtocolKind,
    QuorumCertificate,
    VOTE_KIND,
    conflicts,
    default_payload,
    extends,
    genesis_qc,
    make_child,
)


class ProtocolError(Exception):
    pass


class InternalConsistencyError(ProtocolError):
    """A harness bug: the state machine was driven into an impossible state."""


class EventKind(str, enum.Enum):
    PREPARED = "Prepared"
    LOCKED = "Locked"
    EXECUTED = "Executed"
    ENTERED_VIEW = "EnteredView"
    BLAME_BROADCAST = "BlameBroadcast"
    QUIT_VIEW = "QuitView"


@dataclass(frozen=True)
class ReplicaEvent:
    kind: EventKind
    view: int
    time: int
    block: Optional[str] = None


class TimerKind(str, enum.Enum):
    BLAME = "BlameTimeout"
    COMMIT = "CommitTimeout"
    VIEW_CHANGE = "ViewChangeWait"
    PROPOSE = "ProposeWait"


@dataclass(frozen=True)
class Timer:
    kind: TimerKind
    view: int
    block: Optional[str] = None


@dataclass(frozen=True)
class TimerRequest:
    at: int
    timer: Timer


@dataclass
class ReplicaState:
    id: ProcessId
    view: int = 0
    leader: int = -1
    b_prepared: str = GENESIS.digest
    prepared_qc: Optional[QuorumCertificate] = None  # None stands for the genesis certificate
    b_lock: str = GENESIS.digest
    lock_qc: Optional[QuorumCertificate] = None
    b_exec: str = GENESIS.digest
    executed: frozenset = frozenset({GENESIS.digest})
    known: frozenset = frozenset({GENESIS.digest})
    # per-view scratch, reset on view entry
    voted: Optional[str] = None
    proposed: bool = False
    reports: dict = field(default_factory=dict)  # block -> frozenset of reporter indices
    report_qcs: dict = field(default_factory=dict)  # block -> certificate carried by its reports
    vote_buffer: dict = field(default_factory=dict)  # (phase, block) -> frozenset of voter indices
    formed: frozenset = frozenset()  # phases (or Sync blocks) already certified this view
    phases_seen: frozenset = frozenset()
    # Sync HotStuff
    quit: bool = False
    blamed: bool = False
    blames: frozenset = frozenset()
    proposal_seen: Optional[str] = None
    seen: dict = field(default_factory=dict)  # block -> first observation time
    vote_times: dict = field(default_factory=dict)  # block -> time this replica voted on it
    blame_deadline: Optional[int] = None
    commit_deadlines: dict = field(default_factory=dict)
    stale_drops: int = 0

    def clone(self) -> "ReplicaState":
        return replace(
            self,
            reports=dict(self.reports),
            report_qcs=dict(self.report_qcs),
            vote_buffer=dict(self.vote_buffer),
            seen=dict(self.seen),
            vote_times=dict(self.vote_times),
            commit_deadlines=dict(self.commit_deadlines),
        )

    @property
    def lock_view(self) -> int:
        return self.lock_qc.view if self.lock_qc is not None else 0

    @property
    def prepared_view(self) -> int:
        return self.prepared_qc.view if self.prepared_qc is not None else 0


@dataclass
class Step:
    state: ReplicaState
    outbound: list = field(default_factory=list)
    events: list = field(default_factory=list)
    timers: list = field(default_factory=list)
    dropped: bool = False


def safe_to_vote(
    block, state: ReplicaState, store: BlockStore, justify: Optional[QuorumCertificate] = None
) -> bool:
    """Voting rule: extend the lock, or carry a justification newer than the lock."""
    if extends(block.digest, state.b_lock, store):
        return True
    justify_view = justify.view if justify is not None else 0
    return justify_view > state.lock_view


def _rank(qc: Optional[QuorumCertificate], block: str, store: BlockStore) -> tuple:
    view = qc.view if qc is not None else 0
    return (view, store.get(block).height, block)


class _Base:
    kinds: frozenset = frozenset()
    exec_below_lock = True

    def __init__(self, config: ProtocolConfig, delta_ms: int = 50):
        self.config = config
        self.q = config.quorum_size
        self.delta = delta_ms
        self._genesis_qc = genesis_qc(config.n)

    def initial_state(self, pid: ProcessId) -> ReplicaState:
        return ReplicaState(id=pid)

    def _check_kind(self, msg: Message):
        if msg.kind not in self.kinds:
            raise ProtocolError(f"{self.config.kind.value} does not accept {msg.kind.value}")

    def _send(self, step: Step, kind: MsgKind, to: Optional[int] = None, **kw):
        step.outbound.append(
            Message(kind=kind, sender=step.state.id, view=step.state.view, recipient=to, **kw)
        )

    def _emit(self, step: Step, kind: EventKind, now: int, block: Optional[str] = None):
        step.events.append(ReplicaEvent(kind, step.state.view, now, block))

    def _execute(self, step: Step, block: str, now: int, store: BlockStore):
        s = step.state
        if block in s.executed:
            return
        chain = [d for d in store.ancestors(block) if d not in s.executed]
        for d in reversed(chain):
            self._emit(step, EventKind.EXECUTED, now, d)
        s.executed = s.executed | frozenset(chain)
        s.b_exec = block
        if self.exec_below_lock and not extends(s.b_lock, s.b_exec, store):
            raise InternalConsistencyError(
                f"replica {s.id}: executed {s.b_exec[:8]} is not an ancestor of lock {s.b_lock[:8]}"
            )
        if conflicts(s.b_lock, s.b_exec, store):
            raise InternalConsistencyError(f"replica {s.id}: executed a block conflicting with its lock")

    def _new_view_state(self, state: ReplicaState, view: int, leader: int) -> ReplicaState:
        if view < state.view:
            raise InternalConsistencyError(f"replica {state.id} moving back from view {state.view} to {view}")
        s = state.clone()
        s.view = view
        s.leader = leader
        s.voted = None
        s.proposed = False
        s.reports = {}
        s.report_qcs = {}
        s.vote_buffer = {}
        s.formed = frozenset()
        s.phases_seen = frozenset()
        s.quit = False
        s.blamed = False
        s.blames = frozenset()
        s.proposal_seen = None
        return s

    def handle_message(self, state: ReplicaState, msg: Message, now: int, store: BlockStore) -> Step:
        self._check_kind(msg)
        if msg.view != state.view:
            s = state.clone()
            s.stale_drops += 1
            return Step(s, dropped=True)
        step = Step(state.clone())
        getattr(self, "_on_" + msg.kind.name.lower())(step, msg, now, store)
        return step

    def on_timer(self, state: ReplicaState, timer: Timer, now: int, store: BlockStore) -> Step:
        raise ProtocolError(f"{self.config.kind.value} has no protocol timers")


class _LockStep(_Base):
    """Basic and 2-Phase HotStuff: leader-driven phases inside one view."""

    next_phase: dict = {}
    prepare_locks = False
    kinds = frozenset(
        {MsgKind.NEW_VIEW, MsgKind.PROPOSE, MsgKind.VOTE_PREPARE, MsgKind.VOTE_PRECOMMIT,
         MsgKind.VOTE_COMMIT, MsgKind.QC_ANNOUNCE}
    )

    def enter_view(self, state: ReplicaState, view: int, leader: int, now: int, store: BlockStore) -> Step:
        step = Step(self._new_view_state(state, view, leader))
        s = step.state
        self._emit(step, EventKind.ENTERED_VIEW, now)
        self._send(step, MsgKind.NEW_VIEW, to=leader, block=s.b_prepared,
                   qc=s.prepared_qc or self._genesis_qc)
        return step

    def _on_new_view(self, step: Step, msg: Message, now: int, store: BlockStore):
        s = step.state
        if s.id.index != s.leader or s.proposed:
            return
        block = msg.block
        s.reports[block] = s.reports.get(block, frozenset()) | {msg.sender.index}
        s.report_qcs.setdefault(block, msg.qc)
        if len(s.reports[block]) < self.q:
            return
        # a quorum of identical prepared-block reports
        parent = store.get(block)
        child = store.add(make_child(parent, s.view, default_payload(s.id.index, s.view)))
        s.proposed = True
        s.known = s.known | {block, child.digest}
        self._send(step, MsgKind.PROPOSE, block=child.digest, qc=s.report_qcs[block])

    def _on_propose(self, step: Step, msg: Message, now: int, store: BlockStore):
        s = step.state
        if msg.sender.index != s.leader or s.voted is not None:
            return
        blk = store.get(msg.block)
        if blk.parent not in s.known:
            return  # no block-sync subprotocol
        s.known = s.known | {blk.digest}
        if safe_to_vote(blk, s, store, msg.qc):
            s.voted = blk.digest
            self._send(step, MsgKind.VOTE_PREPARE, to=s.leader, block=blk.digest)

    def _on_vote(self, step: Step, msg: Message, phase: Phase):
        s = step.state
        if s.id.index != s.leader or phase in s.formed:
            return
        key = (phase, msg.block)
        voters = s.vote_buffer.get(key, frozenset()) | {msg.sender.index}
        s.vote_buffer[key] = voters
        if len(voters) >= self.q:
            s.formed = s.formed | {phase}
            qc = QuorumCertificate(msg.block, s.view, phase, voters)
            self._send(step, MsgKind.QC_ANNOUNCE, qc=qc, block=msg.block)

    def _on_vote_prepare(self, step, msg, now, store):
        self._on_vote(step, msg, Phase.PREPARE)

    def _on_vote_precommit(self, step, msg, now, store):
        self._on_vote(step, msg, Phase.PRECOMMIT)

    def _on_vote_commit(self, step, msg, now, store):
        self._on_vote(step, msg, Phase.COMMIT)

    def _on_qc_announce(self, step: Step, msg: Message, now: int, store: BlockStore):
        s = step.state
        qc = msg.qc
        if msg.sender.index != s.leader or qc is None or qc.view != s.view:
            return
        if qc.phase in s.phases_seen or qc.phase not in self.next_phase:
            return
        s.phases_seen = s.phases_seen | {qc.phase}
        s.known = s.known | {qc.block}
        self._apply_qc(step, qc, now, store)
        nxt = self.next_phase[qc.phase]
        if nxt is not None:
            self._send(step, VOTE_KIND[nxt], to=s.leader, block=qc.block)

    def _set_prepared(self, step, qc, now):
        s = step.state
        if qc.view > s.prepared_view:
            s.b_prepared = qc.block
            s.prepared_qc = qc
            self._emit(step, EventKind.PREPARED, now, qc.block)

    def _set_lock(self, step, qc, now):
        s = step.state
        if qc.view > s.lock_view:
            s.b_lock = qc.block
            s.lock_qc = qc
            self._emit(step, EventKind.LOCKED, now, qc.block)

    def _apply_qc(self, step: Step, qc: QuorumCertificate, now: int, store: BlockStore):
        self._set_prepared(step, qc, now)
        if qc.phase is not Phase.PREPARE or self.prepare_locks:
            self._set_lock(step, qc, now)
        if qc.phase is Phase.COMMIT:
            self._execute(step, qc.block, now, store)
            self._emit(step, EventKind.QUIT_VIEW, now)


class BasicHotStuff(_LockStep):
    next_phase = {Phase.PREPARE: Phase.PRECOMMIT, Phase.PRECOMMIT: Phase.COMMIT, Phase.COMMIT: None}


class TwoPhaseHotStuff(_LockStep):
    # the certificate of the Prepare phase already locks
    next_phase = {Phase.PREPARE: Phase.COMMIT, Phase.COMMIT: None}
    prepare_locks = True
    kinds = _LockStep.kinds - {MsgKind.VOTE_PRECOMMIT}


class SyncHotStuff(_Base):
    """Early Sync HotStuff: commit 2 deltas after voting unless a conflict shows up."""

    kinds = frozenset(
        {MsgKind.NEW_VIEW, MsgKind.PROPOSE, MsgKind.VOTE_PREPARE, MsgKind.BLAME, MsgKind.BLAME_FORWARD}
    )
    # commits need no certificate, so the lock may still sit on the parent
    exec_below_lock = False

    def enter_view(self, state: ReplicaState, view: int, leader: int, now: int, store: BlockStore) -> Step:
        step = Step(self._new_view_state(state, view, leader))
        s = step.state
        self._emit(step, EventKind.ENTERED_VIEW, now)
        self._send(step, MsgKind.NEW_VIEW, to=leader, block=s.b_lock, qc=s.lock_qc or self._genesis_qc)
        # the first proposal is due 2 deltas in, the blame timer runs from then
        s.blame_deadline = now + 5 * self.delta
        step.timers.append(TimerRequest(s.blame_deadline, Timer(TimerKind.BLAME, view)))
        if s.id.index == leader:
            step.timers.append(TimerRequest(now + 2 * self.delta, Timer(TimerKind.PROPOSE, view)))
        return step

    # -- observation helpers -------------------------------------------------

    def _observe(self, step: Step, block: str, now: int, store: BlockStore):
        s = step.state
        if block not in s.seen:
            s.seen[block] = now
        blk = store.get(block)
        # two different blocks proposed in the current view: equivocating leader
        if blk.view == s.view and blk.height > 0:
            if s.proposal_seen is None:
                s.proposal_seen = block
            elif s.proposal_seen != block:
                self._blame(step, now)

    def _maybe_lock(self, step: Step, qc: Optional[QuorumCertificate], now: int, store: BlockStore):
        s = step.state
        if qc is None or qc.view == 0:
            return
        if _rank(qc, qc.block, store) > _rank(s.lock_qc, s.b_lock, store):
            s.b_lock = qc.block
            s.lock_qc = qc
            s.known = s.known | {qc.block}
            self._emit(step, EventKind.LOCKED, now, qc.block)

    def _blame(self, step: Step, now: int):
        s = step.state
        if s.blamed or s.quit:
            return
        s.blamed = True
        self._send(step, MsgKind.BLAME)
        self._emit(step, EventKind.BLAME_BROADCAST, now)

    def _count_blames(self, step: Step, signers, now: int):
        s = step.state
        s.blames = s.blames | frozenset(signers)
        if len(s.blames) >= self.q and not s.quit:
            s.quit = True  # stop voting, keep listening
            self._send(step, MsgKind.BLAME_FORWARD, signers=s.blames)
            step.timers.append(TimerRequest(now + 2 * self.delta, Timer(TimerKind.VIEW_CHANGE, s.view)))

    # -- messages ------------------------------------------------------------

    def _on_new_view(self, step: Step, msg: Message, now: int, store: BlockStore):
        s = step.state
        if s.id.index != s.leader or s.proposed:
            return
        s.known = s.known | {msg.block}
        s.reports[msg.block] = s.reports.get(msg.block, frozenset()) | {msg.sender.index}
        old = s.report_qcs.get(msg.block)
        if old is None or (msg.qc is not None and msg.qc.view > old.view):
            s.report_qcs[msg.block] = msg.qc

    def _on_propose(self, step: Step, msg: Message, now: int, store: BlockStore):
        s = step.state
        if msg.sender.index != s.leader:
            return
        blk = store.get(msg.block)
        if blk.parent not in s.known:
            return
        s.known = s.known | {blk.digest}
        self._observe(step, blk.digest, now, store)
        if msg.qc is not None:
            self._observe(step, msg.qc.block, now, store)
        self._maybe_lock(step, msg.qc, now, store)
        if s.quit or s.voted is not None or s.blamed:
            return
        if not extends(blk.digest, s.b_lock, store):
            self._blame(step, now)  # refusing to vote triggers a view change
            return
        s.voted = blk.digest
        s.vote_times[blk.digest] = now
        s.b_prepared = blk.digest
        self._emit(step, EventKind.PREPARED, now, blk.digest)
        self._send(step, MsgKind.VOTE_PREPARE, block=blk.digest)
        s.blame_deadline = now + 3 * self.delta
        step.timers.append(TimerRequest(s.blame_deadline, Timer(TimerKind.BLAME, s.view)))
        s.commit_deadlines[blk.digest] = now + 2 * self.delta
        step.timers.append(TimerRequest(now + 2 * self.delta, Timer(TimerKind.COMMIT, s.view, blk.digest)))

    def _on_vote_prepare(self, step: Step, msg: Message, now: int, store: BlockStore):
        s = step.state
        if msg.block not in store:
            return
        s.known = s.known | {msg.block}
        self._observe(step, msg.block, now, store)
        key = (Phase.GENERIC, msg.block)
        voters = s.vote_buffer.get(key, frozenset()) | {msg.sender.index}
        s.vote_buffer[key] = voters
        if len(voters) >= self.q and msg.block not in s.formed:
            s.formed = s.formed | {msg.block}
            self._maybe_lock(step, QuorumCertificate(msg.block, s.view, Phase.GENERIC, voters), now, store)

    def _on_blame(self, step: Step, msg: Message, now: int, store: BlockStore):
        self._count_blames(step, {msg.sender.index}, now)

    def _on_blame_forward(self, step: Step, msg: Message, now: int, store: BlockStore):
        self._count_blames(step, msg.signers, now)

    # -- timers --------------------------------------------------------------

    def on_timer(self, state: ReplicaState, timer: Timer, now: int, store: BlockStore) -> Step:
        step = Step(state.clone())
        s = step.state
        if timer.kind is TimerKind.COMMIT:
            if timer.block not in s.commit_deadlines:
                raise InternalConsistencyError(f"commit timer for unknown block {timer.block}")
            self._commit_expired(step, timer.block, now, store)
        elif timer.view != s.view:
            pass  # superseded by a view change
        elif timer.kind is TimerKind.PROPOSE:
            self._propose(step, now, store)
        elif timer.kind is TimerKind.BLAME:
            if s.blame_deadline == now and not s.quit:
                self._blame(step, now)
        elif timer.kind is TimerKind.VIEW_CHANGE:
            self._emit(step, EventKind.QUIT_VIEW, now)
        return step

    def _propose(self, step: Step, now: int, store: BlockStore):
        s = step.state
        if s.proposed or s.quit or s.id.index != s.leader:
            return
        candidates = dict(s.report_qcs)
        candidates.setdefault(s.b_lock, s.lock_qc or self._genesis_qc)
        best = max(candidates, key=lambda b: _rank(candidates[b], b, store))
        child = store.add(make_child(store.get(best), s.view, default_payload(s.id.index, s.view)))
        s.proposed = True
        s.known = s.known | {best, child.digest}
        self._send(step, MsgKind.PROPOSE, block=child.digest, qc=candidates[best])

    def _commit_expired(self, step: Step, block: str, now: int, store: BlockStore):
        s = step.state
        voted_at = s.vote_times[block]
        del s.commit_deadlines[block]
        for other, t in s.seen.items():
            if t >= voted_at and conflicts(other, block, store):
                return  # drop it
        if conflicts(s.b_lock, block, store):
            return  # lock moved to a conflicting chain
        self._execute(step, block, now, store)


def make_protocol(config: ProtocolConfig, delta_ms: int = 50) -> _Base:
    kind = ProtocolKind(config.kind)
    if kind is ProtocolKind.HOTSTUFF:
        return BasicHotStuff(config, delta_ms)
    if kind is ProtocolKind.TWO_PHASE:
        return TwoPhaseHotStuff(config, delta_ms)
    if kind is ProtocolKind.SYNC:
        return SyncHotStuff(config, delta_ms)
    raise ConfigError(f"unknown protocol kind {kind}")


def handle_message(state: ReplicaState, msg: Message, now: int, store: BlockStore,
                   config: ProtocolConfig, delta_ms: int = 50) -> Step:
    return make_protocol(config, delta_ms).handle_message(state, msg, now, store)


def on_timer(state: ReplicaState, timer: Timer, now: int, store: BlockStore,
             config: ProtocolConfig, delta_ms: int = 50) -> Step:
    if config.kind is not ProtocolKind.SYNC:
        raise ProtocolError("protocol timers exist for Sync HotStuff only")
    return make_protocol(config, delta_ms).on_timer(state, timer, now, store)
