"""Liveness and safety checkers over round-boundary snapshots.

A snapshot reduces each correct replica to the digests of its prepared,
locked and executed blocks.  A system state is *hot* when the correct
replicas hold conflicting locks, no locked block could still gather a quorum,
and nobody executed anything since the previous snapshot.

Two detectors consume hot states:

* temperature checking counts consecutive hot snapshots of one execution;
* lasso detection looks for cycles of hot states in a transition graph
  shared by every execution of a campaign.

The time-bound baseline, the agreement check and the false-positive
classifier only look at the execution itself.
"""
from __future__ import annotations

import enum
import hashlib
import threading
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import networkx as nx

from .chain import GENESIS, BlockStore, ProcessId, ProtocolConfig, conflicts


# -- partial states -----------------------------------------------------------


@dataclass(frozen=True, order=True)
class PartialProcessState:
    prepared: str
    lock: str
    exec: str


def _state_hash(items: tuple, fresh_exec: bool) -> str:
    h = hashlib.blake2b(digest_size=16)
    h.update(b"PSS1")
    for pid, st in items:
        h.update(f"{pid}|{st.prepared}|{st.lock}|{st.exec};".encode())
    h.update(b"fresh=1" if fresh_exec else b"fresh=0")
    return h.hexdigest()


@dataclass(frozen=True)
class PartialSystemState:
    """Correct replicas' partial states, in ProcessId order, plus a freshness bit.

    ``fresh_exec`` records whether a correct replica executed a block since
    the previous snapshot.  It is part of the hash because hotness depends
    on it, and equal hashes must mean equal hotness.
    """

    items: tuple  # ((ProcessId, PartialProcessState), ...)
    fresh_exec: bool = False
    state_hash: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(sorted(self.items)))
        object.__setattr__(self, "state_hash", _state_hash(self.items, self.fresh_exec))

    @classmethod
    def of(cls, state_map: dict, fresh_exec: bool = False) -> "PartialSystemState":
        return cls(tuple(state_map.items()), fresh_exec)

    @property
    def state_map(self) -> dict:
        return dict(self.items)

    def locks(self) -> list:
        return [st.lock for _, st in self.items]


def initial_state(correct) -> PartialSystemState:
    g = GENESIS.digest
    return PartialSystemState.of({p: PartialProcessState(g, g, g) for p in correct})


# -- hot states ---------------------------------------------------------------


def lock_support(s: PartialSystemState, block: str, store: BlockStore) -> int:
    """Correct replicas that could still vote for ``block``: their lock does not conflict with it."""
    return sum(1 for lock in s.locks() if lock == block or not conflicts(lock, block, store))


def is_hot(s: PartialSystemState, store: BlockStore, config: ProtocolConfig, faulty: int = 1,
           count_faulty: bool = False) -> bool:
    """Conflicting locks, no quorum reachable on any locked block, no fresh execution.

    With ``count_faulty`` the ``faulty`` Byzantine indices are assumed to vote
    for every block, which makes the predicate stricter.
    """
    if s.fresh_exec:
        return False
    locks = sorted(set(s.locks()))
    if not any(conflicts(a, b, store) for a, b in combinations(locks, 2)):
        return False
    extra = faulty if count_faulty else 0
    q = config.quorum_size
    return all(lock_support(s, b, store) + extra < q for b in locks)


# -- temperature --------------------------------------------------------------


class VerdictKind(str, enum.Enum):
    LIVENESS = "LivenessViolation"
    SAFETY = "SafetyViolation"
    NONE = "NoViolation"


class Method(str, enum.Enum):
    TEMPERATURE = "Temperature"
    LASSO = "Lasso"
    TIME_BOUND = "TimeBound"
    AGREEMENT = "Agreement"


@dataclass
class Verdict:
    kind: VerdictKind
    method: Method
    trace: list = field(default_factory=list)  # state hashes, round 1 first
    witness: Optional[list] = None
    round: Optional[int] = None  # round at which the verdict was reached
    seed: Optional[int] = None
    detail: str = ""

    def __post_init__(self):
        if self.kind is VerdictKind.LIVENESS and self.method is Method.LASSO and not self.witness:
            raise ValueError("a lasso verdict needs a witness cycle")

    def record(self) -> dict:
        return {
            "kind": self.kind.value, "method": self.method.value, "round": self.round,
            "seed": self.seed, "witness": self.witness, "detail": self.detail,
        }


@dataclass
class TemperatureState:
    temp: int = 0
    tt: int = 5

    def __post_init__(self):
        if self.tt < 1:
            raise ValueError(f"temperature threshold must be positive, got {self.tt}")


def check_temperature(s, trace: list, temp: TemperatureState, hot: Optional[bool] = None,
                      store: Optional[BlockStore] = None, config: Optional[ProtocolConfig] = None,
                      **hot_kw) -> tuple:
    """One temperature step.  ``trace`` is the snapshot sequence up to and including ``s``.

    ``hot`` may be given directly; otherwise it is evaluated with :func:`is_hot`.
    """
    if hot is None:
        hot = is_hot(s, store, config, **hot_kw)
    if not hot:
        return TemperatureState(0, temp.tt), None
    t = TemperatureState(temp.temp + 1, temp.tt)
    if t.temp == t.tt:
        hashes = [x.state_hash if isinstance(x, PartialSystemState) else x for x in trace]
        return t, Verdict(VerdictKind.LIVENESS, Method.TEMPERATURE, hashes, round=len(trace))
    return t, None


def temperature_scan(hot_bits, tt: int = 5) -> Optional[int]:
    """Round (1-based) at which temperature checking fires over a hot/non-hot sequence."""
    temp = TemperatureState(0, tt)
    for i, bit in enumerate(hot_bits, 1):
        temp, verdict = check_temperature(None, list(range(i)), temp, hot=bool(bit))
        if verdict is not None:
            return i
    return None


# -- state transition graph ---------------------------------------------------


class StateTransitionGraph:
    """Hash-keyed states and transitions shared by all executions of a campaign.

    Each insertion holds the lock, so concurrent writers never observe a
    half-inserted edge.  Searches should run once writers are done.
    """

    def __init__(self):
        self.states: dict = {}  # hash -> PartialSystemState (None if only the hash is known)
        self.edges: dict = {}  # hash -> set of successor hashes
        self.hot_flags: dict = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.hot_flags)

    @property
    def edge_count(self) -> int:
        return sum(len(v) for v in self.edges.values())

    def add_state(self, h: str, hot: bool, state: Optional[PartialSystemState] = None):
        with self._lock:
            self._add_state(h, hot, state)

    def _add_state(self, h, hot, state):
        if h not in self.hot_flags:
            self.hot_flags[h] = bool(hot)
            self.states[h] = state
            self.edges[h] = set()
        elif self.hot_flags[h] != bool(hot):
            raise ValueError(f"state {h} re-added with a different hot flag")
        elif state is not None and self.states[h] is None:
            self.states[h] = state

    def add_transition(self, src: str, src_hot: bool, dst: str, dst_hot: bool,
                       src_state=None, dst_state=None):
        with self._lock:
            self._add_state(src, src_hot, src_state)
            self._add_state(dst, dst_hot, dst_state)
            self.edges[src].add(dst)

    def merge(self, transitions):
        """Insert ``(src, src_hot, dst, dst_hot)`` tuples, e.g. from a worker process."""
        for src, src_hot, dst, dst_hot in transitions:
            self.add_transition(src, src_hot, dst, dst_hot)

    def to_networkx(self, hot_only: bool = False) -> nx.DiGraph:
        g = nx.DiGraph()
        keep = {h for h, hot in self.hot_flags.items() if hot or not hot_only}
        g.add_nodes_from(sorted(keep))
        for src in sorted(keep):
            g.add_edges_from((src, dst) for dst in sorted(self.edges[src]) if dst in keep)
        return g

    def export(self) -> str:
        """Adjacency list: ``v <hash> hot|cold`` lines, then ``e <src> <dst>`` lines, sorted."""
        lines = [f"v {h} {'hot' if self.hot_flags[h] else 'cold'}" for h in sorted(self.hot_flags)]
        lines += [f"e {s} {d}" for s in sorted(self.edges) for d in sorted(self.edges[s])]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def parse(cls, text: str) -> "StateTransitionGraph":
        g = cls()
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v" and len(parts) == 3:
                g.add_state(parts[1], parts[2] == "hot")
            elif parts[0] == "e" and len(parts) == 3:
                g.edges[parts[1]].add(parts[2])
            else:
                raise ValueError(f"bad graph line: {line!r}")
        return g


def update_graph(g: StateTransitionGraph, prev: PartialSystemState, nxt: PartialSystemState,
                 store: BlockStore, config: ProtocolConfig, **hot_kw):
    g.add_transition(
        prev.state_hash, is_hot(prev, store, config, **hot_kw),
        nxt.state_hash, is_hot(nxt, store, config, **hot_kw),
        prev, nxt,
    )


def hot_cycle_components(g: StateTransitionGraph) -> list:
    """Vertex sets of the hot subgraph's strongly connected components that contain a cycle."""
    hot = g.to_networkx(hot_only=True)
    out = []
    for comp in nx.strongly_connected_components(hot):
        if len(comp) > 1 or hot.has_edge(next(iter(comp)), next(iter(comp))):
            out.append(frozenset(comp))
    return sorted(out, key=lambda c: sorted(c))


def find_hot_lassos(g: StateTransitionGraph, per_component: int = 64) -> list:
    """One verdict per elementary hot cycle, deduplicated by vertex set.

    Dense hot regions can hold exponentially many cycles, so at most
    ``per_component`` are reported per strongly connected component.  Every
    cyclic component yields at least one.
    """
    hot = g.to_networkx(hot_only=True)
    verdicts = []
    for comp in hot_cycle_components(g):
        sub = hot.subgraph(comp)
        seen = set()
        for cycle in nx.simple_cycles(sub):
            key = frozenset(cycle)
            if key in seen:
                continue
            seen.add(key)
            start = cycle.index(min(cycle))
            witness = cycle[start:] + cycle[:start]
            verdicts.append(Verdict(VerdictKind.LIVENESS, Method.LASSO, list(witness), witness=list(witness)))
            if len(seen) >= per_component:
                break
    return verdicts


# -- execution-level checks ---------------------------------------------------


def round_at(execution, t: int) -> int:
    """First round whose boundary is at or after time ``t``."""
    for b in execution.boundaries:
        if b.time >= t:
            return b.round
    return execution.boundaries[-1].round if execution.boundaries else 0


def time_bound_check(execution, bound: int) -> Optional[Verdict]:
    """Flag the execution if correct replicas go ``bound`` ms without executing anything.

    The gaps considered run from time 0 to the first execution, between
    executions, and from the last execution to the end of the run.
    """
    if bound <= 0:
        raise ValueError(f"time bound must be positive, got {bound}")
    times = sorted({e.time for e in execution.executed()})
    last = 0
    for t in times + [execution.end_time]:
        if t - last > bound:
            return Verdict(VerdictKind.LIVENESS, Method.TIME_BOUND,
                           [s.state_hash for s in execution.states],
                           round=round_at(execution, last + bound + 1),
                           detail=f"no execution between {last} ms and {t} ms")
        last = t
    return None


def check_safety(execution) -> Optional[Verdict]:
    """Two correct replicas executed different blocks at the same height."""
    by_height = {}
    for e in execution.executed():
        height = execution.store.get(e.block).height
        first = by_height.setdefault(height, e)
        if first.block != e.block:
            return Verdict(VerdictKind.SAFETY, Method.AGREEMENT,
                           [s.state_hash for s in execution.states],
                           round=round_at(execution, e.time),
                           detail=f"height {height}: {first.replica} executed {first.block[:8]}, "
                                  f"{e.replica} executed {e.block[:8]}")
    return None


def final_locks(execution) -> list:
    b = execution.boundaries[-1]
    return [b.snapshots[p].lock for p in execution.correct]


def classify_false_positive(execution, verdict: Optional[Verdict] = None) -> bool:
    """True when the final correct locks hold no conflicting pair, so progress is still possible."""
    if verdict is not None and verdict.kind is not VerdictKind.LIVENESS:
        raise ValueError("only liveness verdicts can be classified")
    locks = sorted(set(final_locks(execution)))
    return not any(conflicts(a, b, execution.store) for a, b in combinations(locks, 2))
