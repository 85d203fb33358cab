"""Run summaries: aggregate an event log into the numbers that matter.

Everything is computed from event rows alone, so a report generated
offline from a saved log equals the one generated right after a run, and
every count can be re-derived by re-counting rows.  The headline figure is
storage: bytes of retained execution traces versus bytes of the pattern
log, and their ratio: traces grow with every executed statement, the
pattern log only with distinct malicious patterns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import events as ev
from .crypto import principal_id
from .patterns import (
    DEFAULT_CAPACITY,
    MaliciousLog,
    MalformedLog,
    MatchMode,
    PatternRecord,
    ThreatClass,
)
from .tracing import ENTRY_LEN, PREAMBLE_LEN

# The implemented countermeasures, each classified as a detection or a
# prevention mechanism.
COUNTERMEASURES = {
    "execution_tracing": "DETECTION",
    "pattern_gate": "PREVENTION",
    "authentication": "PREVENTION",
    "access_policy": "PREVENTION",
    "step_quota": "PREVENTION",
    "payload_sealing": "PREVENTION",
    "signed_communication_records": "DETECTION",
    "flood_detection": "DETECTION",
}


@dataclass
class Report:
    incidents: dict[str, dict[str, int]] = field(default_factory=dict)
    incidents_total: int = 0
    requests_allowed: int = 0
    requests_denied: dict[str, int] = field(default_factory=dict)
    denied_total: int = 0
    pattern_records: dict[str, list[dict]] = field(default_factory=dict)
    pattern_record_count: int = 0
    pattern_log_bytes: int = 0
    blocklist_size: int = 0
    trace_entries: int = 0
    trace_hops: int = 0
    trace_bytes: int = 0
    bytes_ratio: float = 0.0
    captures_total: int = 0
    captures_sealed: int = 0
    captures_plaintext: int = 0
    disputes: dict[str, int] = field(default_factory=dict)
    agent_steps: dict[str, int] = field(default_factory=dict)
    countermeasures: dict[str, str] = field(default_factory=lambda: dict(COUNTERMEASURES))

    def to_dict(self) -> dict:
        return {
            "incidents": self.incidents,
            "incidents_total": self.incidents_total,
            "requests_allowed": self.requests_allowed,
            "requests_denied": self.requests_denied,
            "denied_total": self.denied_total,
            "pattern_records": self.pattern_records,
            "pattern_record_count": self.pattern_record_count,
            "pattern_log_bytes": self.pattern_log_bytes,
            "blocklist_size": self.blocklist_size,
            "trace_entries": self.trace_entries,
            "trace_hops": self.trace_hops,
            "trace_bytes": self.trace_bytes,
            "bytes_ratio": self.bytes_ratio,
            "captures_total": self.captures_total,
            "captures_sealed": self.captures_sealed,
            "captures_plaintext": self.captures_plaintext,
            "disputes": self.disputes,
            "agent_steps": self.agent_steps,
            "countermeasures": self.countermeasures,
        }


def _require(row: dict, index: int, *fields: str) -> None:
    for f in fields:
        if f not in row:
            raise MalformedLog(f"row {index}: missing field {f!r}")


def reconstruct_logs(rows: list[dict],
                     capacity: int = DEFAULT_CAPACITY) -> dict[str, MaliciousLog]:
    """Rebuild every platform's pattern log by replaying the event stream:
    incidents insert, pattern denials hit, quota kills blocklist, and
    migrations carry a copy of the source platform's log to the next one."""
    logs: dict[str, MaliciousLog] = {}
    carried: dict[str, MaliciousLog] = {}

    def log_for(platform: str) -> MaliciousLog:
        if platform not in logs:
            logs[platform] = MaliciousLog(capacity=capacity)
        return logs[platform]

    for i, row in enumerate(rows):
        kind = row.get("type")
        if kind == ev.INCIDENT:
            _require(row, i, "platform", "agent", "threat", "pattern", "tick")
            if row["pattern"] is not None:
                log_for(row["platform"]).insert(PatternRecord(
                    pattern=bytes.fromhex(row["pattern"]),
                    match_mode=MatchMode.EXACT,
                    threat_class=ThreatClass[row["threat"]],
                    source_agent=principal_id(row["agent"]),
                    first_seen=row["tick"],
                ))
        elif kind == ev.REQUEST_DENIED:
            _require(row, i, "platform", "reason", "pattern")
            if row["reason"] == "PATTERN_MATCH" and row["pattern"] is not None:
                log = log_for(row["platform"])
                rec = log.find(bytes.fromhex(row["pattern"]), MatchMode.EXACT)
                if rec is not None:
                    rec.hit_count += 1
        elif kind == ev.QUOTA_KILL:
            _require(row, i, "platform", "agent")
            log_for(row["platform"]).block_agent(principal_id(row["agent"]))
        elif kind == ev.MIGRATE_OUT:
            _require(row, i, "platform", "agent")
            carried[row["agent"]] = log_for(row["platform"]).clone()
        elif kind == ev.ADMIT:
            _require(row, i, "platform", "agent", "hop")
            if row["hop"] > 0 and row["agent"] in carried:
                logs[row["platform"]] = log_for(row["platform"]).merged_with(
                    carried[row["agent"]])
    return logs


def generate_report(rows: list[dict], capacity: int = DEFAULT_CAPACITY,
                    pattern_log: MaliciousLog | None = None) -> Report:
    """Aggregate event rows; when a saved pattern-log file is supplied its
    contents replace the per-platform reconstruction."""
    report = Report()
    for i, row in enumerate(rows):
        kind = row.get("type")
        if kind is None or "tick" not in row:
            raise MalformedLog(f"row {i}: not an event row")
        if kind == ev.INCIDENT:
            _require(row, i, "threat", "countermeasure")
            by_cm = report.incidents.setdefault(row["threat"], {})
            by_cm[row["countermeasure"]] = by_cm.get(row["countermeasure"], 0) + 1
            report.incidents_total += 1
        elif kind == ev.REQUEST_ALLOWED:
            _require(row, i, "captured", "sealed")
            report.requests_allowed += 1
            if row["captured"]:
                report.captures_total += 1
                if row["sealed"]:
                    report.captures_sealed += 1
                else:
                    report.captures_plaintext += 1
        elif kind == ev.REQUEST_DENIED:
            _require(row, i, "reason")
            report.requests_denied[row["reason"]] = \
                report.requests_denied.get(row["reason"], 0) + 1
            report.denied_total += 1
        elif kind == ev.STEP_SLICE:
            _require(row, i, "agent", "steps")
            report.trace_entries += row["steps"]
            report.agent_steps[row["agent"]] = \
                report.agent_steps.get(row["agent"], 0) + row["steps"]
        elif kind in (ev.HALT, ev.QUOTA_KILL, ev.MIGRATE_OUT):
            report.trace_hops += 1
        elif kind == ev.DISPUTE:
            _require(row, i, "outcome")
            report.disputes[row["outcome"]] = report.disputes.get(row["outcome"], 0) + 1

    report.trace_bytes = PREAMBLE_LEN * report.trace_hops + ENTRY_LEN * report.trace_entries

    if pattern_log is not None:
        logs = {"log-file": pattern_log}
    else:
        logs = reconstruct_logs(rows, capacity=capacity)
    blocked: set[bytes] = set()
    for name in sorted(logs):
        log = logs[name]
        report.pattern_records[name] = [
            {"pattern": r.pattern.hex(), "mode": r.match_mode.name,
             "threat": r.threat_class.name, "hits": r.hit_count,
             "first_seen": r.first_seen}
            for r in log.records
        ]
        report.pattern_record_count += len(log.records)
        report.pattern_log_bytes += len(log.serialize())
        blocked |= log.blocklist
    report.blocklist_size = len(blocked)
    if report.pattern_log_bytes:
        report.bytes_ratio = report.trace_bytes / report.pattern_log_bytes
    return report


def render_table(report: Report) -> str:
    lines = []
    add = lines.append
    add("== incidents by threat class ==")
    if not report.incidents:
        add("  (none)")
    for threat in sorted(report.incidents):
        for cm in sorted(report.incidents[threat]):
            add(f"  {threat:<14} {cm:<10} {report.incidents[threat][cm]:>8}")
    add("== requests ==")
    add(f"  {'allowed':<25} {report.requests_allowed:>8}")
    for reason in sorted(report.requests_denied):
        add(f"  denied {reason:<18} {report.requests_denied[reason]:>8}")
    add("== pattern log ==")
    add(f"  {'records':<25} {report.pattern_record_count:>8}")
    add(f"  {'blocklisted agents':<25} {report.blocklist_size:>8}")
    add(f"  {'log bytes':<25} {report.pattern_log_bytes:>8}")
    for platform in sorted(report.pattern_records):
        for rec in report.pattern_records[platform]:
            add(f"    {platform}: {rec['threat']} {rec['mode']} "
                f"pattern={rec['pattern']} hits={rec['hits']}")
    add("== trace storage ==")
    add(f"  {'hops':<25} {report.trace_hops:>8}")
    add(f"  {'entries':<25} {report.trace_entries:>8}")
    add(f"  {'trace bytes':<25} {report.trace_bytes:>8}")
    add(f"  {'trace/pattern ratio':<25} {report.bytes_ratio:>8.1f}")
    add("== eavesdropping ==")
    add(f"  {'captured payloads':<25} {report.captures_total:>8}")
    add(f"  {'sealed':<25} {report.captures_sealed:>8}")
    add(f"  {'plaintext':<25} {report.captures_plaintext:>8}")
    if report.disputes:
        add("== disputes ==")
        for outcome in sorted(report.disputes):
            add(f"  {outcome:<25} {report.disputes[outcome]:>8}")
    add("== countermeasure classification ==")
    for name in sorted(report.countermeasures):
        add(f"  {name:<30} {report.countermeasures[name]}")
    return "\n".join(lines)
