import pytest

from hotstuff_liveness.chain import (
    GENESIS, BlockStore, Message, MsgKind, Phase, ProcessId, ProtocolConfig, QuorumCertificate, genesis_qc,
    make_child,
)
from hotstuff_liveness.protocols import EventKind, ProtocolError, Timer, TimerKind, make_protocol


def kinds(step):
    return [e.kind for e in step.events]


def setup(kind, pid=ProcessId(0), n=4, f=1, view=1, leader=0):
    proto = make_protocol(ProtocolConfig(n, f, kind))
    store = BlockStore()
    step = proto.enter_view(proto.initial_state(pid), view, leader, 0, store)
    return proto, store, step.state, step


def new_view(sender, view=1, block=GENESIS.digest, qc=None):
    return Message(MsgKind.NEW_VIEW, ProcessId.parse(sender), view, 0, block=block, qc=qc or genesis_qc(4))


def test_enter_view_reports_prepared_block_to_leader():
    _, _, s, step = setup("2phase", ProcessId(2), leader=1)
    (msg,) = step.outbound
    assert (msg.kind, msg.recipient, msg.block) == (MsgKind.NEW_VIEW, 1, GENESIS.digest)
    assert kinds(step) == [EventKind.ENTERED_VIEW]


def test_leader_proposes_on_quorum_of_identical_reports():
    proto, store, s, _ = setup("2phase")
    for sender in ("0", "1"):
        step = proto.handle_message(s, new_view(sender), 10, store)
        s = step.state
        assert not step.outbound
    step = proto.handle_message(s, new_view("2"), 10, store)
    (prop,) = step.outbound
    assert prop.kind is MsgKind.PROPOSE and store.get(prop.block).parent == GENESIS.digest


def test_leader_waits_when_reports_disagree():
    proto, store, s, _ = setup("2phase")
    other = store.add(make_child(GENESIS, 0, b"other")).digest
    for sender, block in (("0", GENESIS.digest), ("1", GENESIS.digest), ("2", other), ("3", other)):
        step = proto.handle_message(s, new_view(sender, block=block), 10, store)
        s = step.state
        assert not step.outbound


def test_twin_reports_count_once():
    proto, store, s, _ = setup("2phase")
    for sender in ("1A", "1B", "2"):
        step = proto.handle_message(s, new_view(sender), 10, store)
        s = step.state
    assert not step.outbound


def _locked_on(proto, store, pid, block, view):
    s = proto.initial_state(pid)
    s = proto.enter_view(s, view, 0, 0, store).state
    qc = QuorumCertificate(block, view, Phase.PREPARE, frozenset({0, 1, 2}))
    return proto.handle_message(s, Message(MsgKind.QC_ANNOUNCE, ProcessId(0), view, block=block, qc=qc), 5,
                                store).state


def test_two_phase_prepare_certificate_locks():
    proto, store, _, _ = setup("2phase")
    b1 = store.add(make_child(GENESIS, 1, b"b1")).digest
    s = _locked_on(proto, store, ProcessId(1), b1, 1)
    assert s.b_lock == b1 and s.b_prepared == b1 and s.b_exec == GENESIS.digest


def test_basic_prepare_certificate_does_not_lock():
    proto, store, _, _ = setup("hotstuff")
    b1 = store.add(make_child(GENESIS, 1, b"b1")).digest
    s = _locked_on(proto, store, ProcessId(1), b1, 1)
    assert s.b_prepared == b1 and s.b_lock == GENESIS.digest


@pytest.mark.parametrize("kind,phases", [("2phase", [Phase.PREPARE, Phase.COMMIT]),
                                         ("hotstuff", [Phase.PREPARE, Phase.PRECOMMIT, Phase.COMMIT])])
def test_commit_certificate_executes_and_quits(kind, phases):
    proto, store, s, _ = setup(kind, ProcessId(1))
    b1 = store.add(make_child(GENESIS, 1, b"b1")).digest
    for ph in phases:
        qc = QuorumCertificate(b1, 1, ph, frozenset({0, 1, 2}))
        step = proto.handle_message(s, Message(MsgKind.QC_ANNOUNCE, ProcessId(0), 1, block=b1, qc=qc), 5, store)
        s = step.state
    assert s.b_exec == b1
    assert kinds(step)[-2:] == [EventKind.EXECUTED, EventKind.QUIT_VIEW]


def test_vote_refused_for_conflicting_block_without_newer_justification():
    proto, store, _, _ = setup("2phase")
    b1 = store.add(make_child(GENESIS, 1, b"b1"))
    b2 = store.add(make_child(GENESIS, 2, b"b2"))
    s = _locked_on(proto, store, ProcessId(1), b1.digest, 1)
    s = proto.enter_view(s, 3, 0, 0, store).state
    s.known = s.known | {GENESIS.digest}
    child = store.add(make_child(b2, 3, b"c"))
    s.known = s.known | {b2.digest}
    stale = QuorumCertificate(b2.digest, 1, Phase.PREPARE, frozenset({0, 1, 2}))
    step = proto.handle_message(s, Message(MsgKind.PROPOSE, ProcessId(0), 3, block=child.digest, qc=stale), 0, store)
    assert not step.outbound
    newer = QuorumCertificate(b2.digest, 2, Phase.PREPARE, frozenset({0, 1, 2}))
    step = proto.handle_message(s, Message(MsgKind.PROPOSE, ProcessId(0), 3, block=child.digest, qc=newer), 0, store)
    assert [m.kind for m in step.outbound] == [MsgKind.VOTE_PREPARE]


def test_leader_certifies_after_quorum_of_votes():
    proto, store, s, _ = setup("2phase")
    b1 = store.add(make_child(GENESIS, 1, b"b1")).digest
    out = []
    for sender in ("0", "1A", "1B", "2"):
        step = proto.handle_message(s, Message(MsgKind.VOTE_PREPARE, ProcessId.parse(sender), 1, 0, block=b1), 5, store)
        s = step.state
        out += step.outbound
    (ann,) = out
    assert ann.kind is MsgKind.QC_ANNOUNCE and ann.qc.signers == frozenset({0, 1, 2})


def test_stale_messages_are_dropped():
    proto, store, s, _ = setup("2phase", view=3)
    step = proto.handle_message(s, new_view("1", view=2), 0, store)
    assert step.dropped and step.state.stale_drops == 1


def test_two_phase_rejects_precommit_votes():
    proto, store, s, _ = setup("2phase")
    with pytest.raises(ProtocolError):
        proto.handle_message(s, Message(MsgKind.VOTE_PRECOMMIT, ProcessId(1), 1, 0, block=GENESIS.digest), 0, store)


# -- Sync HotStuff -------------------------------------------------------------

def sync_leader_proposes():
    proto, store, s, step = setup("sync", ProcessId(0), n=3, f=1)
    (timer,) = [t for t in step.timers if t.timer.kind is TimerKind.PROPOSE]
    assert timer.at == 100  # two deltas
    step = proto.on_timer(s, timer.timer, 100, store)
    (prop,) = step.outbound
    return proto, store, prop


def test_sync_voter_commits_two_deltas_after_voting():
    proto, store, prop = sync_leader_proposes()
    s = proto.enter_view(proto.initial_state(ProcessId(1)), 1, 0, 0, store).state
    step = proto.handle_message(s, prop, 100, store)
    assert [m.kind for m in step.outbound] == [MsgKind.VOTE_PREPARE]
    (commit,) = [t for t in step.timers if t.timer.kind is TimerKind.COMMIT]
    assert commit.at == 200
    step = proto.on_timer(step.state, commit.timer, 200, store)
    assert step.state.b_exec == prop.block and EventKind.EXECUTED in kinds(step)


def test_sync_equivocation_blocks_commit_and_triggers_blame():
    proto, store, prop = sync_leader_proposes()
    s = proto.enter_view(proto.initial_state(ProcessId(1)), 1, 0, 0, store).state
    step = proto.handle_message(s, prop, 100, store)
    (commit,) = [t for t in step.timers if t.timer.kind is TimerKind.COMMIT]
    other = store.add(make_child(GENESIS, 1, b"equivocation"))
    step = proto.handle_message(step.state, Message(MsgKind.PROPOSE, ProcessId(0, "B"), 1, block=other.digest), 150, store)
    assert MsgKind.BLAME in [m.kind for m in step.outbound]
    step = proto.on_timer(step.state, commit.timer, 200, store)
    assert step.state.b_exec == GENESIS.digest


def test_sync_blame_quorum_quits_after_two_deltas():
    proto, store, s, _ = setup("sync", ProcessId(1), n=3, f=1)
    step = proto.handle_message(s, Message(MsgKind.BLAME, ProcessId(0), 1), 10, store)
    step = proto.handle_message(step.state, Message(MsgKind.BLAME, ProcessId(2), 1), 20, store)
    assert [m.kind for m in step.outbound] == [MsgKind.BLAME_FORWARD]
    (vc,) = step.timers
    assert vc.at == 120 and vc.timer.kind is TimerKind.VIEW_CHANGE
    step = proto.on_timer(step.state, vc.timer, 120, store)
    assert kinds(step) == [EventKind.QUIT_VIEW]


def test_lock_step_protocols_have_no_timers():
    proto, store, s, _ = setup("hotstuff")
    with pytest.raises(ProtocolError):
        proto.on_timer(s, Timer(TimerKind.BLAME, 1), 0, store)
