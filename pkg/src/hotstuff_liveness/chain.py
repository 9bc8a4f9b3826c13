"""Blocks, certificates, votes and messages shared by every protocol variant.

Everything here is immutable once built.  The only mutable object is the
:class:`BlockStore`, and it only ever grows.

Canonical block encoding (feeds the digest, and therefore the monitor's state
hashes, so it must never change)::

    b"HSB1"
    u32 len | parent digest bytes (16)
    u32 len | height as u64 big-endian
    u32 len | view as u64 big-endian
    u32 len | payload bytes

The digest is BLAKE2b-128 of that byte string, rendered as 32 hex chars.  The
genesis block is encoded with an all-zero parent and then declared its own
parent.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

DIGEST_BYTES = 16
_MAGIC = b"HSB1"


class ChainError(Exception):
    pass


class UnknownBlockError(ChainError, KeyError):
    """A digest was looked up that the store has never seen."""


class MalformedVotesError(ChainError, ValueError):
    pass


class ConfigError(ValueError):
    pass


class ProtocolKind(str, enum.Enum):
    HOTSTUFF = "hotstuff"
    TWO_PHASE = "2phase"
    SYNC = "sync"


class Phase(str, enum.Enum):
    PREPARE = "prepare"
    PRECOMMIT = "precommit"
    COMMIT = "commit"
    GENERIC = "generic"


class MsgKind(str, enum.Enum):
    NEW_VIEW = "NewView"
    PROPOSE = "Propose"
    VOTE_PREPARE = "VotePrepare"
    VOTE_PRECOMMIT = "VotePreCommit"
    VOTE_COMMIT = "VoteCommit"
    QC_ANNOUNCE = "QCAnnounce"
    BLAME = "Blame"
    BLAME_FORWARD = "BlameForward"

    @property
    def is_vote(self) -> bool:
        return self in (MsgKind.VOTE_PREPARE, MsgKind.VOTE_PRECOMMIT, MsgKind.VOTE_COMMIT)


VOTE_KIND = {
    Phase.PREPARE: MsgKind.VOTE_PREPARE,
    Phase.PRECOMMIT: MsgKind.VOTE_PRECOMMIT,
    Phase.COMMIT: MsgKind.VOTE_COMMIT,
    Phase.GENERIC: MsgKind.VOTE_PREPARE,
}


@dataclass(frozen=True, order=True)
class ProcessId:
    """One protocol instance.  Twins share ``index`` and differ in ``twin``."""

    index: int
    twin: str = ""  # "A", "B" or "" for a singleton

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"negative process index {self.index}")
        if self.twin not in ("", "A", "B"):
            raise ValueError(f"bad twin tag {self.twin!r}")

    def __str__(self) -> str:
        return f"{self.index}{self.twin}"

    @classmethod
    def parse(cls, text: str) -> "ProcessId":
        text = text.strip()
        if text and text[-1] in "AB":
            return cls(int(text[:-1]), text[-1])
        return cls(int(text))


def _field(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def encode_block(parent: str, height: int, view: int, payload: bytes) -> bytes:
    """Canonical byte encoding of a block's content (see module docstring)."""
    return b"".join(
        (
            _MAGIC,
            _field(bytes.fromhex(parent)),
            _field(struct.pack(">Q", height)),
            _field(struct.pack(">Q", view)),
            _field(payload),
        )
    )


def block_digest(parent: str, height: int, view: int, payload: bytes) -> str:
    raw = encode_block(parent, height, view, payload)
    return hashlib.blake2b(raw, digest_size=DIGEST_BYTES).hexdigest()


@dataclass(frozen=True)
class Block:
    parent: str
    height: int
    view: int
    payload: bytes
    digest: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.digest:
            object.__setattr__(
                self, "digest", block_digest(self.parent, self.height, self.view, self.payload)
            )

    @property
    def is_genesis(self) -> bool:
        return self.height == 0


def _make_genesis() -> Block:
    zero = "00" * DIGEST_BYTES
    digest = block_digest(zero, 0, 0, b"genesis")
    return Block(parent=digest, height=0, view=0, payload=b"genesis", digest=digest)


GENESIS = _make_genesis()


def default_payload(leader: int, view: int, counter: int = 0) -> bytes:
    return f"{leader}:{view}:{counter}".encode()


def make_child(parent: Block, view: int, payload: bytes) -> Block:
    return Block(parent=parent.digest, height=parent.height + 1, view=view, payload=payload)


class BlockStore:
    """Append-only map from digest to block, closed under parents."""

    def __init__(self):
        self._blocks: dict[str, Block] = {GENESIS.digest: GENESIS}
        self.genesis = GENESIS.digest

    def __contains__(self, digest: str) -> bool:
        return digest in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def __iter__(self):
        return iter(self._blocks.values())

    def get(self, digest: str) -> Block:
        try:
            return self._blocks[digest]
        except KeyError:
            raise UnknownBlockError(digest) from None

    def add(self, block: Block) -> Block:
        known = self._blocks.get(block.digest)
        if known is not None:
            return known
        if block.parent not in self._blocks:
            raise UnknownBlockError(f"parent {block.parent} of {block.digest}")
        parent = self._blocks[block.parent]
        if block.height != parent.height + 1:
            raise ChainError(f"height {block.height} does not follow parent height {parent.height}")
        self._blocks[block.digest] = block
        return block

    def ancestors(self, digest: str) -> list[str]:
        """``digest`` and all its ancestors, newest first, genesis last."""
        out = []
        b = self.get(digest)
        while True:
            out.append(b.digest)
            if b.is_genesis:
                return out
            b = self._blocks[b.parent]


def extends(a: str, b: str, store: BlockStore) -> bool:
    """True iff ``b`` lies on the ancestor path of ``a`` (reflexive)."""
    blk_a = store.get(a)
    blk_b = store.get(b)
    while blk_a.height > blk_b.height:
        blk_a = store.get(blk_a.parent)
    return blk_a.digest == blk_b.digest


def conflicts(a: str, b: str, store: BlockStore) -> bool:
    return not extends(a, b, store) and not extends(b, a, store)


@dataclass(frozen=True)
class QuorumCertificate:
    block: str
    view: int
    phase: Phase
    signers: frozenset[int]

    def rank(self, store: Optional[BlockStore] = None) -> tuple:
        height = store.get(self.block).height if store is not None else 0
        return (self.view, height, self.block)


def genesis_qc(n: int) -> QuorumCertificate:
    return QuorumCertificate(GENESIS.digest, 0, Phase.PREPARE, frozenset(range(n)))


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    f: int
    kind: ProtocolKind

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        if self.f < 0 or self.n < 1:
            raise ConfigError(f"invalid n={self.n}, f={self.f}")
        need = 2 * self.f + 1 if self.kind is ProtocolKind.SYNC else 3 * self.f + 1
        if self.n < need:
            raise ConfigError(f"{self.kind.value} needs n >= {need} for f={self.f}, got n={self.n}")

    @property
    def quorum_size(self) -> int:
        if self.kind is ProtocolKind.SYNC:
            return self.f + 1
        return 2 * self.f + 1


@dataclass(frozen=True)
class Vote:
    block: str
    view: int
    phase: Phase
    voter: ProcessId


def form_qc(
    votes: Iterable[Vote], config: ProtocolConfig, phase: Phase
) -> Optional[QuorumCertificate]:
    """Aggregate votes into a certificate once enough distinct indices signed.

    Twin instances share an index, so they count once.
    """
    votes = list(votes)
    if not votes:
        return None
    key = (votes[0].block, votes[0].view, votes[0].phase)
    for v in votes:
        if (v.block, v.view, v.phase) != key:
            raise MalformedVotesError(f"mixed votes: {key} vs {(v.block, v.view, v.phase)}")
    if key[2] != phase:
        raise MalformedVotesError(f"votes carry phase {key[2].value}, asked for {phase.value}")
    signers = frozenset(v.voter.index for v in votes)
    if len(signers) < config.quorum_size:
        return None
    return QuorumCertificate(key[0], key[1], phase, signers)


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    sender: ProcessId
    view: int
    recipient: Optional[int] = None  # process index; None broadcasts to every instance
    block: Optional[str] = None
    qc: Optional[QuorumCertificate] = None
    signers: frozenset[int] = frozenset()  # blame forwarding only
