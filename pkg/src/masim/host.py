"""The simulated agent platform.

A platform admits agents (authenticating credentials and, for migrating
agents, checking the signed package and replay-verifying the previous
hop), runs them under a step quota, mediates every SEND/READRES/WRITERES
through the pattern gate first and the access policy second, records
delivered communications for non-repudiation, and produces signed
migration packages when an agent leaves.  Platforms can themselves be
malicious: an EAVESDROP platform captures the payloads it delivers, an
ALTER platform silently mutates agent memory after a configured step,
the lazy tamperer that trace verification exists to catch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from . import events
from .bytecode import (
    READRES,
    SEND,
    WRITERES,
    AgentState,
    Env,
    OutcomeKind,
    Program,
    Request,
    TraceEntry,
    decode_program,
    decode_state,
    encode_state,
    state_digest,
    step,
)
from .crypto import ID_LEN, KeyRegistry, UnknownKey, sha256
from .events import EventLog
from .patterns import MaliciousLog, ThreatClass, extract_pattern, normalize
from .policy import (
    RECEIVER_AGENT,
    RECEIVER_RESOURCE,
    AccessPolicy,
    AuthFailure,
    Credential,
    Identity,
    action_for_request,
    authenticate,
    authorize,
    record_communication,
    resource_receiver_id,
    seal_payload,
)
from .tracing import (
    ExecutionTrace,
    Fingerprint,
    HopRecord,
    Verdict,
    VerdictKind,
    make_fingerprint,
    verify_trace,
)


class Countermeasure(Enum):
    DETECTION = "DETECTION"
    PREVENTION = "PREVENTION"


@dataclass(frozen=True)
class Incident:
    tick: int
    threat_class: ThreatClass
    agent_id: bytes
    request: Request | None
    detail: str
    countermeasure: Countermeasure


class MaliciousMode(Enum):
    NONE = "none"
    EAVESDROP = "eavesdrop"
    ALTER = "alter"


@dataclass(frozen=True)
class AlterConfig:
    slot: int
    value: int
    after_step: int  # mutate after the agent's Nth executed step here (1-based)


@dataclass(frozen=True)
class HopEntry:
    fp: Fingerprint
    incoming_digest: bytes


@dataclass(frozen=True)
class MigrationPackage:
    """The signed bundle that carries an agent between platforms: code,
    credential, serialized state plus its digest, the fingerprint history,
    and the agent's pattern log."""

    program_code: bytes
    credential: Credential
    state_bytes: bytes
    state_digest: bytes
    hops: tuple[HopEntry, ...]
    log_bytes: bytes
    sender_platform_id: bytes
    signature: bytes

    def body(self) -> bytes:
        out = bytearray(struct.pack(">I", len(self.program_code)))
        out += self.program_code
        out += self.credential.encode()
        out += struct.pack(">I", len(self.state_bytes))
        out += self.state_bytes
        out += self.state_digest
        out += struct.pack(">I", len(self.hops))
        for hop in self.hops:
            out += hop.fp.encode()
            out += hop.incoming_digest
        out += struct.pack(">I", len(self.log_bytes))
        out += self.log_bytes
        out += self.sender_platform_id
        return bytes(out)

    def encode(self) -> bytes:
        return self.body() + self.signature

    @classmethod
    def decode(cls, data: bytes) -> "MigrationPackage":
        try:
            (plen,) = struct.unpack_from(">I", data, 0)
            off = 4
            program_code = data[off:off + plen]
            if len(program_code) != plen:
                raise ValueError("program truncated")
            off += plen
            credential = Credential.decode(data[off:off + 96])
            off += 96
            (slen,) = struct.unpack_from(">I", data, off)
            off += 4
            state_bytes = data[off:off + slen]
            if len(state_bytes) != slen:
                raise ValueError("state truncated")
            off += slen
            digest = data[off:off + 32]
            off += 32
            (hop_count,) = struct.unpack_from(">I", data, off)
            off += 4
            hops = []
            for _ in range(hop_count):
                fp = Fingerprint.decode(data[off:off + 80])
                incoming = data[off + 80:off + 112]
                if len(incoming) != 32:
                    raise ValueError("hop entry truncated")
                hops.append(HopEntry(fp, incoming))
                off += 112
            (llen,) = struct.unpack_from(">I", data, off)
            off += 4
            log_bytes = data[off:off + llen]
            if len(log_bytes) != llen:
                raise ValueError("log truncated")
            off += llen
            sender = data[off:off + ID_LEN]
            off += ID_LEN
            signature = data[off:off + 32]
            if len(sender) != ID_LEN or len(signature) != 32 or off + 32 != len(data):
                raise ValueError("package length mismatch")
            return cls(program_code, credential, state_bytes, digest,
                       tuple(hops), log_bytes, sender, signature)
        except (struct.error, IndexError) as exc:
            raise ValueError(f"malformed package: {exc}") from None

    def signing_message(self) -> bytes:
        return sha256(self.body())


class AgentStatus(Enum):
    RUNNING = "RUNNING"
    HALTED = "HALTED"
    TERMINATED = "TERMINATED"
    GONE = "GONE"  # migrated away


@dataclass
class ResidentAgent:
    agent_id: bytes
    identity: Identity
    credential: Credential
    code: bytes
    program: Program
    state: AgentState
    hop_index: int
    incoming_digest: bytes
    initial_state: AgentState
    hops_history: list[HopEntry] = field(default_factory=list)
    entries: list[TraceEntry] = field(default_factory=list)
    quota_used: int = 0
    status: AgentStatus = AgentStatus.RUNNING
    alter_applied: bool = False

    @property
    def runnable(self) -> bool:
        return self.status is AgentStatus.RUNNING


@dataclass
class PlatformContext:
    """What a platform needs from the surrounding simulation."""

    registry: KeyRegistry
    events: EventLog
    slice_size: int = 1
    sealing: bool = False
    tracing: bool = True
    verify_on_admit: bool = True
    flood_threshold: int = 0  # identical deliveries allowed per (sender, pattern); 0 = off
    pattern_capacity: int = 1024
    hop_store: dict = field(default_factory=dict)
    nonce_source: object = None  # callable -> 8 bytes
    name_of: object = None  # callable id -> display name
    agent_by_index: object = None  # callable SEND target index -> agent id or None

    def display(self, ident: bytes) -> str:
        if self.name_of is not None:
            return self.name_of(ident)
        return ident.hex()

    def nonce(self) -> bytes:
        if self.nonce_source is not None:
            return self.nonce_source()
        return bytes(8)

    def resolve_agent(self, index: int) -> bytes | None:
        if self.agent_by_index is not None:
            return self.agent_by_index(index)
        return None


@dataclass
class Delivered:
    value: int = 0


@dataclass
class Denied:
    reason: str


class _MediatingEnv(Env):
    """Routes the agent's requests through the platform synchronously."""

    def __init__(self, platform: "Platform", agent: ResidentAgent, ctx: PlatformContext):
        self.platform = platform
        self.agent = agent
        self.ctx = ctx
        self.tick = 0

    def handle(self, request: Request) -> int | None:
        result = self.platform.handle_request(self.tick, self.agent, request, self.ctx)
        if isinstance(result, Delivered):
            return result.value
        return 0


class Platform:
    def __init__(
        self,
        platform_id: bytes,
        resources: dict[int, int] | None = None,
        policy: AccessPolicy | None = None,
        quota: int = 10_000,
        malicious: MaliciousMode = MaliciousMode.NONE,
        alter: AlterConfig | None = None,
        flood_threshold: int | None = None,
        pattern_capacity: int = 1024,
    ):
        self.platform_id = platform_id
        self.resources = dict(resources or {})
        self.policy = policy or AccessPolicy()
        self.quota = quota
        self.malicious = malicious
        self.alter = alter
        self.flood_threshold = flood_threshold
        self.log = MaliciousLog(capacity=pattern_capacity)
        self.audit = []
        self.capture: list[tuple[bool, bytes]] = []
        self.residents: list[ResidentAgent] = []
        self.by_id: dict[bytes, ResidentAgent] = {}
        self.incidents: list[Incident] = []
        self._flood_counts: dict[tuple[bytes, bytes], int] = {}

    # ------------------------------------------------------------------
    # admission
    # ------------------------------------------------------------------

    def admit_fresh(
        self,
        tick: int,
        agent_id: bytes,
        credential: Credential,
        code: bytes,
        ctx: PlatformContext,
        initial_queue: list[int] | None = None,
    ) -> ResidentAgent | None:
        name = ctx.display(agent_id)
        identity = authenticate(credential, code, ctx.registry)
        if isinstance(identity, AuthFailure):
            self._incident(tick, Incident(tick, ThreatClass.MASQUERADE, agent_id, None,
                                          f"credential rejected: {identity.reason.value}",
                                          Countermeasure.PREVENTION), ctx)
            ctx.events.append(events.reject(tick, self._name(ctx), name,
                                            "AUTH_FAILURE", identity.reason.value))
            return None
        if agent_id in self.log.blocklist:
            ctx.events.append(events.reject(tick, self._name(ctx), name, "BLOCKLISTED"))
            return None
        try:
            program = decode_program(code)
        except ValueError as exc:
            ctx.events.append(events.reject(tick, self._name(ctx), name,
                                            "BAD_PROGRAM", str(exc)))
            return None
        state = AgentState()
        if initial_queue:
            state.input_queue.extend(v & 0xFFFFFFFF for v in initial_queue)
        return self._register(tick, agent_id, identity, credential, code, program,
                              state, hop_index=0, hops_history=[], ctx=ctx)

    def admit_package(self, tick: int, pkg: MigrationPackage,
                      ctx: PlatformContext) -> ResidentAgent | None:
        agent_id = pkg.credential.agent_id
        name = ctx.display(agent_id)
        pname = self._name(ctx)

        try:
            sig_ok = ctx.registry.verify_platform(pkg.sender_platform_id,
                                                  pkg.signing_message(), pkg.signature)
        except UnknownKey:
            sig_ok = False
        if not sig_ok:
            self._incident(tick, Incident(tick, ThreatClass.ALTERATION, agent_id, None,
                                          "package signature invalid",
                                          Countermeasure.PREVENTION), ctx)
            ctx.events.append(events.reject(tick, pname, name, "BAD_PACKAGE_SIGNATURE"))
            return None

        identity = authenticate(pkg.credential, pkg.program_code, ctx.registry)
        if isinstance(identity, AuthFailure):
            self._incident(tick, Incident(tick, ThreatClass.MASQUERADE, agent_id, None,
                                          f"credential rejected: {identity.reason.value}",
                                          Countermeasure.PREVENTION), ctx)
            ctx.events.append(events.reject(tick, pname, name, "AUTH_FAILURE",
                                            identity.reason.value))
            return None

        if agent_id in self.log.blocklist:
            ctx.events.append(events.reject(tick, pname, name, "BLOCKLISTED"))
            return None

        try:
            state = decode_state(pkg.state_bytes)
            program = decode_program(pkg.program_code)
        except ValueError as exc:
            ctx.events.append(events.reject(tick, pname, name, "BAD_PROGRAM", str(exc)))
            return None

        if state_digest(state) != pkg.state_digest:
            self._incident(tick, Incident(tick, ThreatClass.ALTERATION, agent_id, None,
                                          "state does not match its digest",
                                          Countermeasure.PREVENTION), ctx)
            ctx.events.append(events.reject(tick, pname, name, "CHAIN_BROKEN",
                                            "state digest mismatch"))
            return None

        if ctx.verify_on_admit and ctx.tracing and pkg.hops:
            verdict = self._verify_last_hop(pkg, program, ctx)
            if verdict is not None and not verdict.verified:
                self._incident(tick, Incident(tick, ThreatClass.ALTERATION, agent_id, None,
                                              f"previous hop failed verification: {verdict.label()}",
                                              Countermeasure.PREVENTION), ctx)
                ctx.events.append(events.reject(tick, pname, name, "CHAIN_BROKEN",
                                                verdict.label()))
                return None

        carried = MaliciousLog.deserialize(pkg.log_bytes, capacity=self.log.capacity)
        self.log = self.log.merged_with(carried)
        state.steps_executed = 0
        return self._register(tick, agent_id, identity, pkg.credential,
                              pkg.program_code, program, state,
                              hop_index=len(pkg.hops), hops_history=list(pkg.hops),
                              ctx=ctx)

    def _verify_last_hop(self, pkg: MigrationPackage, program: Program,
                         ctx: PlatformContext):
        """Replay-verify the hop the agent just completed, using the trace
        and hop-start state the sending platform retained."""
        last_index = len(pkg.hops) - 1
        retained: HopRecord | None = ctx.hop_store.get((pkg.credential.agent_id, last_index))
        if retained is None or retained.initial_state is None:
            return None
        if retained.incoming_digest != pkg.hops[-1].incoming_digest:
            return Verdict(VerdictKind.STATE_MISMATCH)
        return verify_trace(program, retained.initial_state, retained.trace,
                            pkg.hops[-1].fp, pkg.state_digest, ctx.registry,
                            initial_state_digest=retained.incoming_digest)

    def _register(self, tick, agent_id, identity, credential, code, program,
                  state, hop_index, hops_history, ctx) -> ResidentAgent:
        agent = ResidentAgent(
            agent_id=agent_id,
            identity=identity,
            credential=credential,
            code=code,
            program=program,
            state=state,
            hop_index=hop_index,
            incoming_digest=state_digest(state),
            initial_state=state.clone(),
            hops_history=hops_history,
        )
        self.residents.append(agent)
        self.by_id[agent_id] = agent
        ctx.events.append(events.admit(tick, self._name(ctx), ctx.display(agent_id),
                                       hop_index))
        return agent

    # ------------------------------------------------------------------
    # request mediation
    # ------------------------------------------------------------------

    def handle_request(self, tick: int, sender: ResidentAgent, request: Request,
                       ctx: PlatformContext) -> Delivered | Denied:
        """Gate, authorize, record, deliver, in that fixed order."""
        pname = self._name(ctx)
        aname = ctx.display(sender.agent_id)
        op_name = {SEND: "SEND", READRES: "READRES", WRITERES: "WRITERES"}[request.op]
        norm = normalize(request)

        decision = self.log.screen(request, sender.agent_id)
        if not decision.allowed:
            ctx.events.append(events.request_denied(
                tick, pname, aname, op_name, request.kind, request.target,
                request.payload.hex(), decision.reason,
                decision.record.pattern.hex() if decision.record else None,
                decision.record.hit_count if decision.record else None))
            return Denied(decision.reason)

        threshold = self.flood_threshold if self.flood_threshold is not None \
            else ctx.flood_threshold
        if threshold > 0:
            delivered = self._flood_counts.get((sender.agent_id, norm), 0)
            if delivered >= threshold:
                inc = Incident(tick, ThreatClass.DOS, sender.agent_id, request,
                               f"request flood: {delivered + 1} identical requests",
                               Countermeasure.DETECTION)
                self._incident(tick, inc, ctx)
                gated = self.log.screen(request, sender.agent_id)
                ctx.events.append(events.request_denied(
                    tick, pname, aname, op_name, request.kind, request.target,
                    request.payload.hex(), "PATTERN_MATCH",
                    gated.record.pattern.hex() if gated.record else norm.hex(),
                    gated.record.hit_count if gated.record else None))
                return Denied("PATTERN_MATCH")

        if not authorize(sender.identity, action_for_request(request), self.policy):
            inc = Incident(tick, ThreatClass.UNAUTH_ACCESS, sender.agent_id, request,
                           f"policy denied {op_name} on {request.target}",
                           Countermeasure.DETECTION)
            self._incident(tick, inc, ctx)
            ctx.events.append(events.request_denied(
                tick, pname, aname, op_name, request.kind, request.target,
                request.payload.hex(), "ACCESS_DENIED", None, None))
            return Denied("ACCESS_DENIED")

        receiver_kind = RECEIVER_RESOURCE
        receiver_id = resource_receiver_id(request.target)
        receiver_name = f"res:{request.target}"
        target_agent = None
        if request.op == SEND:
            target_id = ctx.resolve_agent(request.target)
            target_agent = self.by_id.get(target_id) if target_id else None
            if target_agent is None or target_agent.status in (AgentStatus.TERMINATED,
                                                               AgentStatus.GONE):
                ctx.events.append(events.request_denied(
                    tick, pname, aname, op_name, request.kind, request.target,
                    request.payload.hex(), "UNKNOWN_TARGET", None, None))
                return Denied("UNKNOWN_TARGET")
            receiver_kind = RECEIVER_AGENT
            receiver_id = target_agent.agent_id
            receiver_name = ctx.display(receiver_id)

        record = record_communication(tick, sender.identity, receiver_kind,
                                      receiver_id, request, self.platform_id,
                                      ctx.registry)
        self.audit.append(record)
        if threshold > 0:
            key = (sender.agent_id, norm)
            self._flood_counts[key] = self._flood_counts.get(key, 0) + 1

        captured = False
        sealed = False
        value = 0
        if request.op == SEND:
            plaintext = request.payload
            if ctx.sealing:
                wire = seal_payload(ctx.registry.sealing_key, ctx.nonce(), plaintext)
                sealed = True
            else:
                wire = plaintext
            if self.malicious is MaliciousMode.EAVESDROP:
                self.capture.append((sealed, wire))
                captured = True
            # the receiving endpoint unseals with the shared key; the queued
            # value always derives from the sender's plaintext
            value = int.from_bytes(plaintext[:4].ljust(4, b"\x00"), "big")
            target_agent.state.input_queue.append(value)
            payload_hex = wire.hex()
        elif request.op == READRES:
            value = self.resources.get(request.target, 0)
            payload_hex = request.payload.hex()
        else:  # WRITERES
            value = int.from_bytes(request.payload, "big")
            self.resources[request.target] = value
            payload_hex = request.payload.hex()

        ctx.events.append(events.request_allowed(
            tick, pname, aname, op_name, request.kind, request.target, payload_hex,
            receiver_name, value, record.request_digest.hex(), captured, sealed))
        return Delivered(value)

    # ------------------------------------------------------------------
    # execution
    # ------------------------------------------------------------------

    def run_slice(self, tick: int, agent: ResidentAgent,
                  ctx: PlatformContext) -> tuple[MigrationPackage, int] | None:
        """Run one slice for a resident agent; returns the migration
        package and target platform index when the slice ended with
        MIGRATE."""
        pname = self._name(ctx)
        aname = ctx.display(agent.agent_id)
        remaining = self.quota - agent.quota_used
        if remaining <= 0:
            ctx.events.append(events.step_slice(tick, pname, aname, 0, "CONTINUE"))
            self._quota_kill(tick, agent, ctx)
            return None

        env = _MediatingEnv(self, agent, ctx)
        env.tick = tick
        allowed = min(ctx.slice_size, remaining)
        executed = 0
        terminal = None
        while executed < allowed:
            outcome, entry = step(agent.state, agent.program, env)
            if entry is not None:
                executed += 1
                agent.quota_used += 1
                if ctx.tracing:
                    agent.entries.append(entry)
                if (self.malicious is MaliciousMode.ALTER and self.alter is not None
                        and not agent.alter_applied
                        and agent.state.steps_executed == self.alter.after_step):
                    # the lazy tamperer: mutate without extending the trace
                    agent.state.memory[self.alter.slot] = self.alter.value & 0xFFFFFFFF
                    agent.alter_applied = True
            if outcome.kind in (OutcomeKind.HALTED, OutcomeKind.MIGRATING,
                                OutcomeKind.FAULT, OutcomeKind.BLOCKED):
                terminal = outcome
                break

        label = terminal.label() if terminal is not None else "CONTINUE"
        ctx.events.append(events.step_slice(tick, pname, aname, executed, label))

        if terminal is None or terminal.kind is OutcomeKind.BLOCKED:
            # still alive; an agent out of steps can never run again
            if agent.quota_used >= self.quota:
                self._quota_kill(tick, agent, ctx)
            return None
        if terminal.kind is OutcomeKind.HALTED:
            agent.status = AgentStatus.HALTED
            ctx.events.append(events.halt(tick, pname, aname))
            self._finalize_hop(agent, ctx)
            return None
        if terminal.kind is OutcomeKind.FAULT:
            agent.status = AgentStatus.TERMINATED
            self._finalize_hop(agent, ctx)
            return None
        # MIGRATING
        pkg = self.package_migration(tick, agent, ctx, terminal.target)
        return pkg, terminal.target

    def _quota_kill(self, tick: int, agent: ResidentAgent, ctx: PlatformContext) -> None:
        inc = Incident(tick, ThreatClass.DOS, agent.agent_id, None,
                       f"step quota of {self.quota} exhausted",
                       Countermeasure.PREVENTION)
        self._incident(tick, inc, ctx)
        self.log.block_agent(agent.agent_id)
        agent.status = AgentStatus.TERMINATED
        ctx.events.append(events.quota_kill(tick, self._name(ctx),
                                            ctx.display(agent.agent_id),
                                            agent.quota_used))
        self._finalize_hop(agent, ctx)

    # ------------------------------------------------------------------
    # migration
    # ------------------------------------------------------------------

    def package_migration(self, tick: int, agent: ResidentAgent,
                          ctx: PlatformContext, target_index: int) -> MigrationPackage:
        out_digest, fp = self._finalize_hop(agent, ctx)
        hops = list(agent.hops_history)
        if fp is not None:
            hops.append(HopEntry(fp, agent.incoming_digest))
        log_bytes = self.log.serialize()  # the agent departs with the merged copy
        state_bytes = encode_state(agent.state)
        pkg = MigrationPackage(
            program_code=agent.code,
            credential=agent.credential,
            state_bytes=state_bytes,
            state_digest=out_digest,
            hops=tuple(hops),
            log_bytes=log_bytes,
            sender_platform_id=self.platform_id,
            signature=b"",
        )
        signature = ctx.registry.sign_as_platform(self.platform_id, pkg.signing_message())
        pkg = MigrationPackage(pkg.program_code, pkg.credential, pkg.state_bytes,
                               pkg.state_digest, pkg.hops, pkg.log_bytes,
                               pkg.sender_platform_id, signature)
        agent.status = AgentStatus.GONE
        ctx.events.append(events.migrate_out(tick, self._name(ctx),
                                             ctx.display(agent.agent_id),
                                             str(target_index), agent.hop_index))
        return pkg

    def _finalize_hop(self, agent: ResidentAgent,
                      ctx: PlatformContext) -> tuple[bytes, Fingerprint | None]:
        # undelivered messages stay behind; the verifier cannot know about
        # mid-hop deliveries, so the departing state must not include them
        agent.state.input_queue.clear()
        out_digest = state_digest(agent.state)
        fp = None
        if ctx.tracing:
            trace = ExecutionTrace(agent.agent_id, self.platform_id,
                                   agent.hop_index, tuple(agent.entries))
            fp = make_fingerprint(trace, ctx.registry)
            ctx.hop_store[(agent.agent_id, agent.hop_index)] = HopRecord(
                platform_id=self.platform_id,
                hop_index=agent.hop_index,
                trace=trace,
                fp=fp,
                incoming_digest=agent.incoming_digest,
                outgoing_digest=out_digest,
                initial_state=agent.initial_state,
            )
        return out_digest, fp

    # ------------------------------------------------------------------

    def _incident(self, tick: int, inc: Incident, ctx: PlatformContext) -> None:
        self.incidents.append(inc)
        pattern_hex = None
        if inc.request is not None:
            record = extract_pattern(inc)
            self.log.insert(record)
            pattern_hex = record.pattern.hex()
        ctx.events.append(events.incident(
            tick, self._name(ctx), ctx.display(inc.agent_id),
            inc.threat_class.name, inc.countermeasure.value, pattern_hex, inc.detail))

    def _name(self, ctx: PlatformContext) -> str:
        return ctx.display(self.platform_id)
