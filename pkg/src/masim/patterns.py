"""The malicious-request pattern log.

Requests are normalized to a canonical byte string (kind, target, payload).
When an attack is detected the offending request's bytes become a pattern
record; every later communication is screened against the log before any
policy check, so one detected incident blocks all repeats.  The log is
bounded: its size tracks the number of distinct malicious patterns, not
how long agents execute, which is the whole point of keeping it instead
of ever-growing traces.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from .bytecode import Request
from .crypto import ID_LEN

LOG_VERSION = 1
DEFAULT_CAPACITY = 1024


class ThreatClass(IntEnum):
    MASQUERADE = 0
    DOS = 1
    UNAUTH_ACCESS = 2
    REPUDIATION = 3
    EAVESDROP = 4
    ALTERATION = 5


class MatchMode(IntEnum):
    EXACT = 0
    PREFIX = 1


class NoRequestInIncident(ValueError):
    """The incident carries no request; callers must blocklist instead."""


class MalformedLog(ValueError):
    pass


def normalize(request: Request) -> bytes:
    """Canonical binary form of a request: kind byte, target byte, payload."""
    return bytes((request.kind & 0xFF, request.target & 0xFF)) + request.payload


@dataclass
class PatternRecord:
    pattern: bytes
    match_mode: MatchMode
    threat_class: ThreatClass
    source_agent: bytes
    first_seen: int
    hit_count: int = 0

    def matches(self, normalized: bytes) -> bool:
        if self.match_mode is MatchMode.EXACT:
            return normalized == self.pattern
        return normalized.startswith(self.pattern)


def extract_pattern(incident) -> PatternRecord:
    """Turn a detected incident into an exact-match pattern record.

    The incident must expose request, threat_class, agent_id and tick;
    quota-style incidents with no request raise NoRequestInIncident and go
    down the blocklist path instead.
    """
    if incident.request is None:
        raise NoRequestInIncident("incident has no offending request")
    return PatternRecord(
        pattern=normalize(incident.request),
        match_mode=MatchMode.EXACT,
        threat_class=incident.threat_class,
        source_agent=incident.agent_id,
        first_seen=incident.tick,
        hit_count=0,
    )


@dataclass(frozen=True)
class ScreenDecision:
    allowed: bool
    record: PatternRecord | None = None
    reason: str | None = None  # PATTERN_MATCH or BLOCKLISTED


ALLOW = ScreenDecision(True)


@dataclass
class MaliciousLog:
    capacity: int = DEFAULT_CAPACITY
    records: list[PatternRecord] = field(default_factory=list)
    blocklist: set[bytes] = field(default_factory=set)

    def find(self, pattern: bytes, mode: MatchMode) -> PatternRecord | None:
        for rec in self.records:
            if rec.pattern == pattern and rec.match_mode is mode:
                return rec
        return None

    def insert(self, record: PatternRecord) -> PatternRecord:
        """Insert with dedupe on (pattern, mode); an existing record wins
        outright.  At capacity the lowest-hit, then oldest-seen record is
        evicted first."""
        existing = self.find(record.pattern, record.match_mode)
        if existing is not None:
            return existing
        if len(self.records) >= self.capacity:
            victim = min(
                range(len(self.records)),
                key=lambda i: (self.records[i].hit_count, self.records[i].first_seen, i),
            )
            del self.records[victim]
        self.records.append(record)
        return record

    def block_agent(self, agent_id: bytes) -> None:
        self.blocklist.add(agent_id)

    def screen(self, request: Request, sender: bytes) -> ScreenDecision:
        """Gate a communication: blocklisted senders and pattern matches
        are denied; a matching record's hit count is incremented."""
        if sender in self.blocklist:
            return ScreenDecision(False, None, "BLOCKLISTED")
        normalized = normalize(request)
        for rec in self.records:
            if rec.matches(normalized):
                rec.hit_count += 1
                return ScreenDecision(False, rec, "PATTERN_MATCH")
        return ALLOW

    def merged_with(self, other: "MaliciousLog") -> "MaliciousLog":
        """Union of two logs: duplicate patterns sum their hits and keep
        the earliest sighting; blocklists union; this log's capacity is
        enforced with the usual eviction rule."""
        merged = MaliciousLog(capacity=self.capacity)
        for rec in self.records + other.records:
            existing = merged.find(rec.pattern, rec.match_mode)
            if existing is None:
                merged.records.append(PatternRecord(
                    rec.pattern, rec.match_mode, rec.threat_class,
                    rec.source_agent, rec.first_seen, rec.hit_count,
                ))
            else:
                existing.hit_count += rec.hit_count
                if rec.first_seen < existing.first_seen:
                    existing.first_seen = rec.first_seen
                    existing.threat_class = rec.threat_class
                    existing.source_agent = rec.source_agent
        while len(merged.records) > merged.capacity:
            victim = min(
                range(len(merged.records)),
                key=lambda i: (merged.records[i].hit_count, merged.records[i].first_seen, i),
            )
            del merged.records[victim]
        merged.blocklist = set(self.blocklist) | set(other.blocklist)
        return merged

    def clone(self) -> "MaliciousLog":
        out = MaliciousLog(capacity=self.capacity)
        out.records = [PatternRecord(r.pattern, r.match_mode, r.threat_class,
                                     r.source_agent, r.first_seen, r.hit_count)
                       for r in self.records]
        out.blocklist = set(self.blocklist)
        return out

    def serialize(self) -> bytes:
        out = bytearray([LOG_VERSION])
        out += struct.pack(">I", len(self.records))
        for rec in self.records:
            out += bytes((rec.match_mode, rec.threat_class))
            out += rec.source_agent
            out += struct.pack(">QQH", rec.first_seen, rec.hit_count, len(rec.pattern))
            out += rec.pattern
        out += struct.pack(">I", len(self.blocklist))
        for ident in sorted(self.blocklist):
            out += ident
        return bytes(out)

    @classmethod
    def deserialize(cls, data: bytes, capacity: int = DEFAULT_CAPACITY) -> "MaliciousLog":
        try:
            if data[0] != LOG_VERSION:
                raise MalformedLog(f"unsupported log version {data[0]}")
            (count,) = struct.unpack_from(">I", data, 1)
            off = 5
            log = cls(capacity=capacity)
            for _ in range(count):
                mode = MatchMode(data[off])
                threat = ThreatClass(data[off + 1])
                source = data[off + 2:off + 2 + ID_LEN]
                off += 2 + ID_LEN
                first_seen, hits, plen = struct.unpack_from(">QQH", data, off)
                off += 18
                pattern = data[off:off + plen]
                if len(pattern) != plen:
                    raise MalformedLog("pattern truncated")
                off += plen
                log.records.append(PatternRecord(pattern, mode, threat, source,
                                                 first_seen, hits))
            (bcount,) = struct.unpack_from(">I", data, off)
            off += 4
            for _ in range(bcount):
                log.blocklist.add(data[off:off + ID_LEN])
                off += ID_LEN
            if off != len(data):
                raise MalformedLog("trailing bytes in log file")
            return log
        except (IndexError, struct.error, ValueError) as exc:
            if isinstance(exc, MalformedLog):
                raise
            raise MalformedLog(str(exc)) from None
