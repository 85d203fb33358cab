"""Execution traces, signed fingerprints, replay verification, and
malicious-host localization.

A hop's trace is the ordered record of every statement the agent executed
on one platform, plus the external input values it consumed.  The trace's
canonical byte encoding is hashed into a fingerprint which the platform
signs.  Verification replays the program against the recorded inputs and
compares both the statement sequence and the resulting state digest, so a
platform that mutates agent state without faithfully extending the trace
is caught, and the first bad hop of an itinerary can be pinpointed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum

from .bytecode import (
    READRES,
    RECV,
    AgentState,
    Env,
    OutcomeKind,
    Program,
    Request,
    TraceEntry,
    state_digest,
    step,
)
from .crypto import ID_LEN, KeyRegistry, UnknownKey

TRACE_MAGIC = b"MATRACE1"
ENTRY_LEN = 14
PREAMBLE_LEN = 48
FINGERPRINT_FILE_LEN = 80


class EmptyItinerary(ValueError):
    pass


def encode_entry(entry: TraceEntry) -> bytes:
    return struct.pack(">IIBBI", entry.seq, entry.pc, entry.opcode,
                       entry.input_flag, entry.input_value)


def decode_entry(data: bytes) -> TraceEntry:
    seq, pc, opcode, flag, value = struct.unpack(">IIBBI", data)
    return TraceEntry(seq, pc, opcode, flag, value)


@dataclass(frozen=True)
class ExecutionTrace:
    agent_id: bytes
    platform_id: bytes
    hop_index: int
    entries: tuple[TraceEntry, ...]

    def encode(self) -> bytes:
        """The canonical byte form; this is both the hashed string and the
        on-disk trace file."""
        head = TRACE_MAGIC + self.platform_id + self.agent_id
        head += struct.pack(">II", self.hop_index, len(self.entries))
        return head + b"".join(encode_entry(e) for e in self.entries)

    @classmethod
    def decode(cls, data: bytes) -> "ExecutionTrace":
        if len(data) < PREAMBLE_LEN or data[:8] != TRACE_MAGIC:
            raise ValueError("not a trace file")
        platform_id = data[8:24]
        agent_id = data[24:40]
        hop_index, count = struct.unpack_from(">II", data, 40)
        if len(data) != PREAMBLE_LEN + count * ENTRY_LEN:
            raise ValueError("trace file length mismatch")
        entries = tuple(
            decode_entry(data[PREAMBLE_LEN + i * ENTRY_LEN:PREAMBLE_LEN + (i + 1) * ENTRY_LEN])
            for i in range(count)
        )
        return cls(agent_id, platform_id, hop_index, entries)


def fingerprint(trace: ExecutionTrace) -> bytes:
    """32-byte trace summary: SHA-256 over the canonical encoding."""
    return hashlib.sha256(trace.encode()).digest()


def sign_fingerprint(digest: bytes, platform_id: bytes, registry: KeyRegistry) -> bytes:
    return registry.sign_as_platform(platform_id, digest)


@dataclass(frozen=True)
class Fingerprint:
    digest: bytes
    signature: bytes
    platform_id: bytes

    def encode(self) -> bytes:
        return self.digest + self.signature + self.platform_id

    @classmethod
    def decode(cls, data: bytes) -> "Fingerprint":
        if len(data) != FINGERPRINT_FILE_LEN:
            raise ValueError("fingerprint file must be exactly 80 bytes")
        return cls(data[0:32], data[32:64], data[64:64 + ID_LEN])


def make_fingerprint(trace: ExecutionTrace, registry: KeyRegistry) -> Fingerprint:
    digest = fingerprint(trace)
    sig = sign_fingerprint(digest, trace.platform_id, registry)
    return Fingerprint(digest, sig, trace.platform_id)


class VerdictKind(Enum):
    VERIFIED = "VERIFIED"
    TAMPERED = "TAMPERED"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    STATE_MISMATCH = "STATE_MISMATCH"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    seq: int | None = None

    @property
    def verified(self) -> bool:
        return self.kind is VerdictKind.VERIFIED

    def label(self) -> str:
        if self.kind is VerdictKind.TAMPERED:
            return f"TAMPERED({self.seq})"
        return self.kind.value


VERIFIED = Verdict(VerdictKind.VERIFIED)


class _ReplayEnv(Env):
    """Feeds the recorded input value to READRES during replay."""

    def __init__(self):
        self.next_value = 0

    def handle(self, request: Request) -> int | None:
        if request.op == READRES:
            return self.next_value
        return None


def _replay(program: Program, initial_state: AgentState,
            entries: tuple[TraceEntry, ...]) -> tuple[Verdict | None, AgentState]:
    """Re-execute the program against the recorded inputs.

    Statement-by-statement: the entry the replay produces must equal the
    recorded one, field for field.  RECV inputs come from the replayed
    queue when it holds values (FIFO order is binding: the front must match
    the recording) and are injected from the trace when it is empty, i.e.
    when the original value was delivered mid-hop.
    """
    state = initial_state.clone()
    state.steps_executed = 0
    env = _ReplayEnv()
    last = len(entries) - 1
    for k, entry in enumerate(entries):
        if entry.seq != k:
            return Verdict(VerdictKind.TAMPERED, k), state
        if entry.input_flag not in (0, 1):
            return Verdict(VerdictKind.TAMPERED, k), state
        if entry.input_flag == 1:
            if entry.opcode == RECV:
                if state.input_queue:
                    if state.input_queue[0] != entry.input_value:
                        return Verdict(VerdictKind.TAMPERED, k), state
                else:
                    state.input_queue.append(entry.input_value)
            elif entry.opcode == READRES:
                env.next_value = entry.input_value
            else:
                # an input claimed for a non-input statement
                return Verdict(VerdictKind.TAMPERED, k), state
        outcome, produced = step(state, program, env)
        if produced is None or produced != entry:
            return Verdict(VerdictKind.TAMPERED, k), state
        if outcome.kind in (OutcomeKind.HALTED, OutcomeKind.MIGRATING,
                            OutcomeKind.FAULT) and k != last:
            # execution ended here; anything after is fabricated
            return Verdict(VerdictKind.TAMPERED, k + 1), state
    return None, state


def verify_trace(
    program: Program,
    initial_state: AgentState,
    trace: ExecutionTrace,
    fp: Fingerprint,
    claimed_final_digest: bytes,
    registry: KeyRegistry,
    initial_state_digest: bytes | None = None,
) -> Verdict:
    verdict, _ = _verify_with_state(program, initial_state, trace, fp,
                                    claimed_final_digest, registry,
                                    initial_state_digest)
    return verdict


def _verify_with_state(program, initial_state, trace, fp, claimed_final_digest,
                       registry, initial_state_digest=None):
    recomputed = fingerprint(trace)
    if fp.digest != recomputed:
        return Verdict(VerdictKind.BAD_SIGNATURE), None
    if not registry.verify_platform(fp.platform_id, recomputed, fp.signature):
        return Verdict(VerdictKind.BAD_SIGNATURE), None
    if initial_state_digest is not None and state_digest(initial_state) != initial_state_digest:
        return Verdict(VerdictKind.STATE_MISMATCH), None
    verdict, final_state = _replay(program, initial_state, trace.entries)
    if verdict is not None:
        return verdict, None
    if state_digest(final_state) != claimed_final_digest:
        return Verdict(VerdictKind.STATE_MISMATCH), None
    return VERIFIED, final_state


def verify_trace_bytes(
    trace_bytes: bytes,
    fingerprint_bytes: bytes,
    program: Program,
    initial_state: AgentState,
    registry: KeyRegistry,
    claimed_final_digest: bytes | None = None,
) -> Verdict:
    """File-level verification: unparseable or unsigned inputs are treated
    as tampered material, never as honest."""
    try:
        fp = Fingerprint.decode(fingerprint_bytes)
    except ValueError:
        return Verdict(VerdictKind.BAD_SIGNATURE)
    if fp.digest != hashlib.sha256(trace_bytes).digest():
        return Verdict(VerdictKind.BAD_SIGNATURE)
    try:
        if not registry.verify_platform(fp.platform_id, fp.digest, fp.signature):
            return Verdict(VerdictKind.BAD_SIGNATURE)
    except UnknownKey:
        return Verdict(VerdictKind.BAD_SIGNATURE)
    try:
        trace = ExecutionTrace.decode(trace_bytes)
    except ValueError:
        return Verdict(VerdictKind.BAD_SIGNATURE)
    verdict, final_state = _replay(program, initial_state, trace.entries)
    if verdict is not None:
        return verdict
    if claimed_final_digest is not None and state_digest(final_state) != claimed_final_digest:
        return Verdict(VerdictKind.STATE_MISMATCH)
    return VERIFIED


@dataclass
class HopRecord:
    """Everything a platform retains about one residency, gathered for
    after-the-fact verification."""

    platform_id: bytes
    hop_index: int
    trace: ExecutionTrace
    fp: Fingerprint
    incoming_digest: bytes
    outgoing_digest: bytes
    initial_state: AgentState | None = None


def locate_malicious_hop(
    hops: list[HopRecord],
    program: Program,
    origin_state: AgentState,
    registry: KeyRegistry,
) -> int | None:
    """Verify an itinerary hop by hop, threading the replayed state from
    the origin; returns the first hop that breaks the digest chain or
    fails verification, or None when every hop checks out."""
    if not hops:
        raise EmptyItinerary("itinerary has no hops")
    threaded = origin_state.clone()
    for i, hop in enumerate(hops):
        if hop.incoming_digest != state_digest(threaded):
            return i
        verdict, final_state = _verify_with_state(
            program, threaded, hop.trace, hop.fp, hop.outgoing_digest, registry,
        )
        if not verdict.verified:
            return i
        threaded = final_state
        # undelivered queue values stay behind at migration
        threaded.input_queue.clear()
    return None
