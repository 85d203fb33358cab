"""The canonical event log: one JSON record per line, fixed field order.

Every security-relevant thing that happens in a run lands here in
execution order.  Field order inside a row is fixed by the builder
functions below, so two serialized logs can be compared byte for byte;
that comparison is the determinism check."""

from __future__ import annotations

import json
from dataclasses import dataclass

ADMIT = "ADMIT"
REJECT = "REJECT"
STEP_SLICE = "STEP_SLICE"
REQUEST_ALLOWED = "REQUEST_ALLOWED"
REQUEST_DENIED = "REQUEST_DENIED"
INCIDENT = "INCIDENT"
MIGRATE_OUT = "MIGRATE_OUT"
MIGRATE_IN = "MIGRATE_IN"
DISPUTE = "DISPUTE"
HALT = "HALT"
QUOTA_KILL = "QUOTA_KILL"


class EventLog:
    def __init__(self, rows: list[dict] | None = None):
        self.rows: list[dict] = rows if rows is not None else []

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def of_type(self, *types: str) -> list[dict]:
        return [r for r in self.rows if r["type"] in types]

    def serialize_lines(self) -> list[str]:
        return [json.dumps(r, separators=(",", ":")) for r in self.rows]

    def serialize(self) -> str:
        return "\n".join(self.serialize_lines()) + ("\n" if self.rows else "")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "EventLog":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        return cls(rows)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class ReplayResult:
    identical: bool
    first_divergence: int | None = None

    def label(self) -> str:
        if self.identical:
            return "Identical"
        return f"FirstDivergence({self.first_divergence})"


def replay_check(log_a: EventLog, log_b: EventLog) -> ReplayResult:
    """Byte comparison of two serialized event logs."""
    a, b = log_a.serialize_lines(), log_b.serialize_lines()
    for i in range(min(len(a), len(b))):
        if a[i] != b[i]:
            return ReplayResult(False, i)
    if len(a) != len(b):
        return ReplayResult(False, min(len(a), len(b)))
    return ReplayResult(True)


def admit(tick, platform, agent, hop):
    return {"tick": tick, "type": ADMIT, "platform": platform, "agent": agent, "hop": hop}


def reject(tick, platform, agent, reason, detail=""):
    return {"tick": tick, "type": REJECT, "platform": platform, "agent": agent,
            "reason": reason, "detail": detail}


def step_slice(tick, platform, agent, steps, outcome):
    return {"tick": tick, "type": STEP_SLICE, "platform": platform, "agent": agent,
            "steps": steps, "outcome": outcome}


def request_allowed(tick, platform, agent, op, kind, target, payload, receiver,
                    value, digest, captured, sealed):
    return {"tick": tick, "type": REQUEST_ALLOWED, "platform": platform, "agent": agent,
            "op": op, "kind": kind, "target": target, "payload": payload,
            "receiver": receiver, "value": value, "digest": digest,
            "captured": captured, "sealed": sealed}


def request_denied(tick, platform, agent, op, kind, target, payload, reason,
                   pattern, hits):
    return {"tick": tick, "type": REQUEST_DENIED, "platform": platform, "agent": agent,
            "op": op, "kind": kind, "target": target, "payload": payload,
            "reason": reason, "pattern": pattern, "hits": hits}


def incident(tick, platform, agent, threat, countermeasure, pattern, detail):
    return {"tick": tick, "type": INCIDENT, "platform": platform, "agent": agent,
            "threat": threat, "countermeasure": countermeasure,
            "pattern": pattern, "detail": detail}


def migrate_out(tick, platform, agent, to, hop):
    return {"tick": tick, "type": MIGRATE_OUT, "platform": platform, "agent": agent,
            "to": to, "hop": hop}


def migrate_in(tick, platform, agent, hop):
    return {"tick": tick, "type": MIGRATE_IN, "platform": platform, "agent": agent,
            "hop": hop}


def dispute(tick, denier, claim_tick, digest, outcome):
    return {"tick": tick, "type": DISPUTE, "denier": denier, "claim_tick": claim_tick,
            "digest": digest, "outcome": outcome}


def halt(tick, platform, agent):
    return {"tick": tick, "type": HALT, "platform": platform, "agent": agent}


def quota_kill(tick, platform, agent, steps):
    return {"tick": tick, "type": QUOTA_KILL, "platform": platform, "agent": agent,
            "steps": steps}
