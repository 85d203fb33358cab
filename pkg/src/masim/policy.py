"""Authentication, authorization, payload sealing, and signed
non-repudiation records with dispute resolution.

Credentials bind an agent id, its owner, and a digest of its code under
the owner's signature, so a platform can tell both "who sent this" and
"is this the code they signed".  Resource access is a plain ACL.  Payloads
can be sealed with a hash-keystream cipher so an eavesdropping platform
sees only ciphertext.  Delivered communications are countersigned and kept
in an audit log that later refutes denials.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum

from .bytecode import Request
from .crypto import KeyRegistry, UnknownKey, sha256
from .patterns import normalize

NONCE_LEN = 8


class SealedTooShort(ValueError):
    pass


@dataclass(frozen=True)
class Credential:
    agent_id: bytes
    owner_id: bytes
    code_digest: bytes
    owner_signature: bytes

    def message(self) -> bytes:
        return self.agent_id + self.owner_id + self.code_digest

    def encode(self) -> bytes:
        return self.message() + self.owner_signature

    @classmethod
    def decode(cls, data: bytes) -> "Credential":
        if len(data) != 96:
            raise ValueError("credential must be 96 bytes")
        return cls(data[0:16], data[16:32], data[32:64], data[64:96])


def issue_credential(agent_id: bytes, owner_id: bytes, code: bytes,
                     registry: KeyRegistry) -> Credential:
    digest = sha256(code)
    sig = registry.sign_as_owner(owner_id, agent_id + owner_id + digest)
    return Credential(agent_id, owner_id, digest, sig)


@dataclass(frozen=True)
class Identity:
    agent_id: bytes
    owner_id: bytes


class AuthReason(Enum):
    BAD_SIGNATURE = "BAD_SIGNATURE"
    CODE_DIGEST_MISMATCH = "CODE_DIGEST_MISMATCH"
    UNKNOWN_OWNER = "UNKNOWN_OWNER"


@dataclass(frozen=True)
class AuthFailure:
    reason: AuthReason


def authenticate(credential: Credential, code: bytes,
                 registry: KeyRegistry) -> Identity | AuthFailure:
    """Verify the owner's signature and that the presented code is the
    code the owner signed."""
    try:
        ok = registry.verify_owner(credential.owner_id, credential.message(),
                                   credential.owner_signature)
    except UnknownKey:
        return AuthFailure(AuthReason.UNKNOWN_OWNER)
    if not ok:
        return AuthFailure(AuthReason.BAD_SIGNATURE)
    if sha256(code) != credential.code_digest:
        return AuthFailure(AuthReason.CODE_DIGEST_MISMATCH)
    return Identity(credential.agent_id, credential.owner_id)


class ActionKind(Enum):
    READ_RES = "READ_RES"
    WRITE_RES = "WRITE_RES"
    SEND = "SEND"
    MIGRATE = "MIGRATE"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: int


@dataclass
class AccessPolicy:
    """Per-resource reader/writer sets keyed by resource id; principals are
    agent or owner ids.  Send and migrate default to allowed unless a
    scenario narrows them to explicit principal sets."""

    resources: dict[int, tuple[frozenset[bytes], frozenset[bytes]]] = field(default_factory=dict)
    senders: frozenset[bytes] | None = None
    migrators: frozenset[bytes] | None = None

    def allow_read(self, resource: int, *principals: bytes) -> None:
        readers, writers = self.resources.get(resource, (frozenset(), frozenset()))
        self.resources[resource] = (readers | set(principals), writers)

    def allow_write(self, resource: int, *principals: bytes) -> None:
        readers, writers = self.resources.get(resource, (frozenset(), frozenset()))
        self.resources[resource] = (readers, writers | set(principals))


def authorize(identity: Identity, action: Action, policy: AccessPolicy) -> bool:
    principals = {identity.agent_id, identity.owner_id}
    if action.kind is ActionKind.READ_RES or action.kind is ActionKind.WRITE_RES:
        readers, writers = policy.resources.get(action.target, (frozenset(), frozenset()))
        granted = readers if action.kind is ActionKind.READ_RES else writers
        return bool(principals & granted)
    if action.kind is ActionKind.SEND:
        return policy.senders is None or bool(principals & policy.senders)
    return policy.migrators is None or bool(principals & policy.migrators)


def action_for_request(request: Request) -> Action:
    from .bytecode import READRES, WRITERES
    if request.op == READRES:
        return Action(ActionKind.READ_RES, request.target)
    if request.op == WRITERES:
        return Action(ActionKind.WRITE_RES, request.target)
    return Action(ActionKind.SEND, request.target)


def _keystream(key: bytes, nonce: bytes, length: int) -> bytes:
    blocks = []
    for i in range((length + 31) // 32):
        blocks.append(hashlib.sha256(key + nonce + struct.pack(">I", i)).digest())
    return b"".join(blocks)[:length]


def seal_payload(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes")
    stream = _keystream(key, nonce, len(plaintext))
    return nonce + bytes(p ^ s for p, s in zip(plaintext, stream))


def unseal_payload(key: bytes, sealed: bytes) -> bytes:
    if len(sealed) < NONCE_LEN:
        raise SealedTooShort(f"sealed payload shorter than {NONCE_LEN} bytes")
    nonce, ciphertext = sealed[:NONCE_LEN], sealed[NONCE_LEN:]
    stream = _keystream(key, nonce, len(ciphertext))
    return bytes(c ^ s for c, s in zip(ciphertext, stream))


RECEIVER_AGENT = 0
RECEIVER_RESOURCE = 1


@dataclass(frozen=True)
class CommunicationRecord:
    """A delivered communication, signed by the sender's owner and
    countersigned by the hosting platform."""

    tick: int
    sender: bytes
    owner_id: bytes
    receiver_kind: int
    receiver: bytes
    request_digest: bytes
    sender_signature: bytes
    platform_signature: bytes

    def message(self) -> bytes:
        return record_message(self.tick, self.sender, self.receiver_kind,
                              self.receiver, self.request_digest)


def record_message(tick: int, sender: bytes, receiver_kind: int,
                   receiver: bytes, request_digest: bytes) -> bytes:
    return struct.pack(">Q", tick) + sender + bytes([receiver_kind]) + receiver + request_digest


def resource_receiver_id(resource: int) -> bytes:
    return bytes(15) + bytes([resource & 0xFF])


def record_communication(
    tick: int,
    identity: Identity,
    receiver_kind: int,
    receiver: bytes,
    request: Request,
    platform_id: bytes,
    registry: KeyRegistry,
) -> CommunicationRecord:
    digest = sha256(normalize(request))
    msg = record_message(tick, identity.agent_id, receiver_kind, receiver, digest)
    return CommunicationRecord(
        tick=tick,
        sender=identity.agent_id,
        owner_id=identity.owner_id,
        receiver_kind=receiver_kind,
        receiver=receiver,
        request_digest=digest,
        sender_signature=registry.sign_as_owner(identity.owner_id, msg),
        platform_signature=registry.sign_as_platform(platform_id, msg),
    )


def verify_record(record: CommunicationRecord, platform_id: bytes,
                  registry: KeyRegistry) -> bool:
    msg = record.message()
    try:
        return (registry.verify_owner(record.owner_id, msg, record.sender_signature)
                and registry.verify_platform(platform_id, msg, record.platform_signature))
    except UnknownKey:
        return False


class DisputeOutcome(Enum):
    REFUTED = "REFUTED"
    UNSUBSTANTIATED = "UNSUBSTANTIATED"


@dataclass(frozen=True)
class DisputeClaim:
    denier: bytes
    request_digest: bytes
    tick: int


def resolve_dispute(claim: DisputeClaim, audit_log: list[CommunicationRecord],
                    registry: KeyRegistry) -> DisputeOutcome:
    """A denial is refuted only by a matching record whose sender signature
    verifies; a forged or absent record cannot refute."""
    for record in audit_log:
        if (record.tick == claim.tick and record.sender == claim.denier
                and record.request_digest == claim.request_digest):
            try:
                ok = registry.verify_owner(record.owner_id, record.message(),
                                           record.sender_signature)
            except UnknownKey:
                ok = False
            if ok:
                return DisputeOutcome.REFUTED
    return DisputeOutcome.UNSUBSTANTIATED
