"""Executable attack fragments, one per threat class.

Attacks are data, not code hooks: each builder returns a complete scenario
(the attacker, a benign bystander, platform settings) plus the incident
classes the run is expected to raise.  Running a fragment and diffing its
event log against the expectations is how the countermeasures are
exercised end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .patterns import ThreatClass
from .sim import AgentSpec, DisputeSpec, OwnerSpec, PlatformSpec, Scenario, Settings


class AttackKind(Enum):
    MASQUERADE = "MASQUERADE"
    DOS_LOOP = "DOS_LOOP"
    DOS_FLOOD = "DOS_FLOOD"
    UNAUTH_ACCESS = "UNAUTH_ACCESS"
    REPUDIATION = "REPUDIATION"
    EAVESDROP = "EAVESDROP"
    ALTERATION = "ALTERATION"


class InvalidParams(ValueError):
    def __init__(self, kind: AttackKind, msg: str):
        super().__init__(f"{kind.value}: {msg}")
        self.kind = kind


@dataclass
class AttackFragment:
    kind: AttackKind
    scenario: Scenario
    expected_incidents: list[ThreatClass] = field(default_factory=list)
    attacker: str = "mallory"
    notes: str = ""


# An endless two-instruction loop: PUSH 0 is 5 bytes and JMPZ 3, so the
# jump lands back on the PUSH with an offset of -8 from the next
# instruction.
DOS_LOOP_PROGRAM = "PUSH 0\nJMPZ -8\n"

BENIGN_PROGRAM = "PUSH 2\nPUSH 3\nADD\nSTORE 0\nLOAD 0\nHALT\n"


def _benign_agent(name: str = "bystander", owner: str = "owner-b",
                  start: str = "P0") -> AgentSpec:
    return AgentSpec(name=name, owner=owner, start=start, program=BENIGN_PROGRAM)


def make_attack(kind: AttackKind, seed: int = 7, **params) -> AttackFragment:
    builders = {
        AttackKind.MASQUERADE: _masquerade,
        AttackKind.DOS_LOOP: _dos_loop,
        AttackKind.DOS_FLOOD: _dos_flood,
        AttackKind.UNAUTH_ACCESS: _unauth_access,
        AttackKind.REPUDIATION: _repudiation,
        AttackKind.EAVESDROP: _eavesdrop,
        AttackKind.ALTERATION: _alteration,
    }
    return builders[kind](seed, **params)


def _masquerade(seed: int) -> AttackFragment:
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=30),
        platforms=[PlatformSpec(name="P0")],
        agents=[
            AgentSpec(name="mallory", owner="owner-m", start="P0",
                      program="PUSH 1\nHALT\n", credential="forged"),
            _benign_agent(),
        ],
        owners=[OwnerSpec(name="owner-m"), OwnerSpec(name="owner-b")],
    )
    return AttackFragment(AttackKind.MASQUERADE, scenario,
                          [ThreatClass.MASQUERADE],
                          notes="forged credential is rejected at admission")


def _dos_loop(seed: int, quota: int = 100) -> AttackFragment:
    if quota < 1:
        raise InvalidParams(AttackKind.DOS_LOOP, "quota must be >= 1")
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=quota + 50),
        platforms=[PlatformSpec(name="P0", quota=quota)],
        agents=[
            AgentSpec(name="mallory", owner="owner-m", start="P0",
                      program=DOS_LOOP_PROGRAM),
            _benign_agent("bystander"),
            _benign_agent("bystander2", owner="owner-b"),
        ],
        owners=[OwnerSpec(name="owner-m"), OwnerSpec(name="owner-b")],
    )
    return AttackFragment(AttackKind.DOS_LOOP, scenario, [ThreatClass.DOS],
                          notes="endless loop killed by the step quota")


def _dos_flood(seed: int, length: int = 8, kind: int = 7,
               payload: bytes = b"\xaa") -> AttackFragment:
    if length < 2:
        raise InvalidParams(AttackKind.DOS_FLOOD, "flood length must be >= 2")
    if not payload:
        raise InvalidParams(AttackKind.DOS_FLOOD, "payload must be non-empty")
    # agent index 1 is the receiver
    send = "SEND 1 " + str(kind) + " " + " ".join(str(b) for b in payload)
    program = "\n".join([send] * length + ["HALT"]) + "\n"
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=length + 20),
        platforms=[PlatformSpec(name="P0", flood_threshold=1)],
        agents=[
            AgentSpec(name="mallory", owner="owner-m", start="P0", program=program),
            AgentSpec(name="receiver", owner="owner-b", start="P0", program="HALT\n"),
            _benign_agent(),
        ],
        owners=[OwnerSpec(name="owner-m"), OwnerSpec(name="owner-b")],
    )
    return AttackFragment(AttackKind.DOS_FLOOD, scenario, [ThreatClass.DOS],
                          notes="one extracted pattern blocks the rest of the flood")


def _unauth_access(seed: int, res: int = 5, attempts: int = 4) -> AttackFragment:
    if not 0 <= res < 256:
        raise InvalidParams(AttackKind.UNAUTH_ACCESS, "resource id out of range")
    if attempts < 1:
        raise InvalidParams(AttackKind.UNAUTH_ACCESS, "attempts must be >= 1")
    program = "\n".join([f"READRES {res}"] * attempts + ["HALT"]) + "\n"
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=attempts + 20),
        platforms=[PlatformSpec(
            name="P0", resources={res: 77},
            read_acl={res: ["bystander"]},  # the attacker is not a reader
        )],
        agents=[
            AgentSpec(name="mallory", owner="owner-m", start="P0", program=program),
            _benign_agent(),
        ],
        owners=[OwnerSpec(name="owner-m"), OwnerSpec(name="owner-b")],
    )
    return AttackFragment(AttackKind.UNAUTH_ACCESS, scenario,
                          [ThreatClass.UNAUTH_ACCESS],
                          notes="first denial is logged once; repeats hit the gate")


def _repudiation(seed: int, kind: int = 9, payload: bytes = b"\x2a") -> AttackFragment:
    send = "SEND 1 " + str(kind) + " " + " ".join(str(b) for b in payload)
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=30),
        platforms=[PlatformSpec(name="P0")],
        agents=[
            AgentSpec(name="mallory", owner="owner-m", start="P0",
                      program=send + "\nHALT\n"),
            AgentSpec(name="receiver", owner="owner-b", start="P0", program="HALT\n"),
            _benign_agent(),
        ],
        owners=[OwnerSpec(name="owner-m"), OwnerSpec(name="owner-b")],
        disputes=[DisputeSpec(tick=3, denier="mallory", claim_tick=0,
                              kind=kind, target=1, payload=payload.hex())],
    )
    return AttackFragment(AttackKind.REPUDIATION, scenario,
                          [ThreatClass.REPUDIATION],
                          notes="denial of a recorded send is refuted")


def _eavesdrop(seed: int, sealed: bool = True,
               payloads: tuple[bytes, ...] = (b"ALPHA_SECRET", b"BRAVO_SECRET")) -> AttackFragment:
    if not payloads:
        raise InvalidParams(AttackKind.EAVESDROP, "need at least one payload")
    sends = []
    for p in payloads:
        sends.append("SEND 1 7 " + " ".join(str(b) for b in p))
    receiver_lines = []
    for slot in range(len(payloads)):
        receiver_lines += ["RECV", f"STORE {slot}"]
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=len(payloads) * 4 + 20, sealing=sealed),
        platforms=[PlatformSpec(name="P0", malicious="eavesdrop")],
        agents=[
            AgentSpec(name="sender", owner="owner-b", start="P0",
                      program="\n".join(sends + ["HALT"]) + "\n"),
            AgentSpec(name="receiver", owner="owner-b", start="P0",
                      program="\n".join(receiver_lines + ["HALT"]) + "\n"),
        ],
        owners=[OwnerSpec(name="owner-b")],
    )
    return AttackFragment(AttackKind.EAVESDROP, scenario, [], attacker="P0",
                          notes="passive capture; sealing decides what it sees")


def _alteration(seed: int, slot: int = 0, value: int = 99,
                after_step: int = 2) -> AttackFragment:
    if not 0 <= slot < 256:
        raise InvalidParams(AttackKind.ALTERATION, "slot out of range")
    scenario = Scenario(
        settings=Settings(seed=seed, max_ticks=30, tracing=True, verify_on_admit=True),
        platforms=[
            PlatformSpec(name="P0", malicious="alter",
                         alter={"slot": slot, "value": value, "after_step": after_step}),
            PlatformSpec(name="P1"),
        ],
        agents=[
            AgentSpec(name="courier", owner="owner-b", start="P0",
                      program="PUSH 7\nSTORE 0\nMIGRATE 1\nHALT\n"),
            _benign_agent("bystander", start="P1"),
        ],
        owners=[OwnerSpec(name="owner-b")],
    )
    return AttackFragment(AttackKind.ALTERATION, scenario, [ThreatClass.ALTERATION],
                          attacker="P0",
                          notes="silent state mutation caught by replay at the next hop")
