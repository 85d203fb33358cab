"""Scenario definitions and the deterministic discrete-event scheduler.

A scenario is one YAML document (platforms, agents, owners, disputes,
settings) with programs inline as assembler text.  The run is a pure
function of the scenario: per tick, platforms are visited in ascending id
order and every runnable resident agent gets exactly one slice in arrival
order; migrations emitted at tick t are admitted at tick t+1; the only
randomness is a splitmix64 stream seeded from the settings, consumed for
sealing nonces.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import yaml

from . import events
from .bytecode import AgentState, Request, assemble, decode_program
from .crypto import KEY_LEN, HmacScheme, KeyRegistry, derive_key, principal_id
from .events import EventLog, ReplayResult, replay_check  # re-exported
from .host import (
    AgentStatus,
    AlterConfig,
    Countermeasure,
    Incident,
    MaliciousMode,
    Platform,
    PlatformContext,
)
from .patterns import MatchMode, PatternRecord, ThreatClass, normalize
from .policy import AccessPolicy, DisputeClaim, DisputeOutcome, issue_credential, resolve_dispute
from .tracing import HopRecord

__all__ = [
    "Settings", "PlatformSpec", "AgentSpec", "OwnerSpec", "DisputeSpec",
    "Scenario", "ScenarioInvalid", "SplitMix64", "Simulation", "run_scenario",
    "EventLog", "ReplayResult", "replay_check",
]


class ScenarioInvalid(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class SplitMix64:
    """The standard splitmix64 generator; the run's only randomness source."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def next_bytes8(self) -> bytes:
        return struct.pack(">Q", self.next_u64())


@dataclass
class Settings:
    seed: int = 0
    max_ticks: int = 1000
    slice: int = 1
    pattern_capacity: int = 1024
    sealing: bool = False
    tracing: bool = True
    verify_on_admit: bool = True
    flood_threshold: int = 0
    quota: int = 10_000
    sealing_key: str | None = None  # hex; default derived


@dataclass
class PlatformSpec:
    name: str
    key: str | None = None  # hex
    quota: int | None = None
    flood_threshold: int | None = None
    resources: dict[int, int] = field(default_factory=dict)
    read_acl: dict[int, list[str]] = field(default_factory=dict)
    write_acl: dict[int, list[str]] = field(default_factory=dict)
    senders: list[str] | None = None
    migrators: list[str] | None = None
    malicious: str = "none"
    alter: dict | None = None  # {slot, value, after_step}
    patterns: list[dict] = field(default_factory=list)  # preseeded records:
    # {pattern: hex, mode: EXACT|PREFIX, threat: <ThreatClass name>}


@dataclass
class AgentSpec:
    name: str
    owner: str
    start: str
    program: str | None = None  # assembler text
    program_hex: str | None = None
    credential: str = "auto"  # auto | forged
    queue: list[int] = field(default_factory=list)


@dataclass
class OwnerSpec:
    name: str
    key: str | None = None


@dataclass
class DisputeSpec:
    tick: int
    denier: str
    claim_tick: int
    kind: int
    target: int
    payload: str = ""  # hex


@dataclass
class Scenario:
    settings: Settings = field(default_factory=Settings)
    platforms: list[PlatformSpec] = field(default_factory=list)
    agents: list[AgentSpec] = field(default_factory=list)
    owners: list[OwnerSpec] = field(default_factory=list)
    disputes: list[DisputeSpec] = field(default_factory=list)

    # ------------------------------------------------------------------

    def validate(self) -> list[str]:
        bad: list[str] = []
        names: set[str] = set()
        for kind, specs in (("platform", self.platforms), ("agent", self.agents),
                            ("owner", self.owners)):
            for spec in specs:
                if not spec.name:
                    bad.append(f"{kind} with empty name")
                elif spec.name in names:
                    bad.append(f"duplicate id {spec.name!r}")
                elif len(spec.name.encode("utf-8")) > 16:
                    bad.append(f"{kind} id {spec.name!r} longer than 16 bytes")
                names.add(spec.name)
        if not self.platforms:
            bad.append("scenario has no platforms")
        s = self.settings
        if s.max_ticks < 1:
            bad.append("settings.max_ticks must be >= 1")
        if s.slice < 1:
            bad.append("settings.slice must be >= 1")
        if s.pattern_capacity < 1:
            bad.append("settings.pattern_capacity must be >= 1")
        if s.quota < 1:
            bad.append("settings.quota must be >= 1")
        if not 0 <= s.seed < (1 << 64):
            bad.append("settings.seed must fit in 64 bits")
        platform_names = {p.name for p in self.platforms}
        owner_names = {o.name for o in self.owners}
        principal_names = owner_names | {a.name for a in self.agents}
        for p in self.platforms:
            if p.malicious not in ("none", "eavesdrop", "alter"):
                bad.append(f"platform {p.name}: unknown malicious mode {p.malicious!r}")
            if p.malicious == "alter":
                a = p.alter or {}
                if not all(k in a for k in ("slot", "value", "after_step")):
                    bad.append(f"platform {p.name}: alter needs slot/value/after_step")
                elif not 0 <= a["slot"] < 256:
                    bad.append(f"platform {p.name}: alter slot out of range")
                elif a["after_step"] < 1:
                    bad.append(f"platform {p.name}: alter after_step must be >= 1")
            if p.key is not None:
                bad.extend(_check_key(p.key, f"platform {p.name}"))
            if p.quota is not None and p.quota < 1:
                bad.append(f"platform {p.name}: quota must be >= 1")
            for res in list(p.resources) + list(p.read_acl) + list(p.write_acl):
                if not 0 <= res < 256:
                    bad.append(f"platform {p.name}: resource id {res} out of range")
            for res, value in p.resources.items():
                if not 0 <= value < (1 << 32):
                    bad.append(f"platform {p.name}: resource {res} value out of range")
            for rec in p.patterns:
                where = f"platform {p.name}: preseeded pattern"
                try:
                    if not bytes.fromhex(str(rec.get("pattern", ""))):
                        bad.append(f"{where} must be non-empty hex")
                except ValueError:
                    bad.append(f"{where} is not hex")
                if rec.get("mode", "EXACT") not in ("EXACT", "PREFIX"):
                    bad.append(f"{where}: mode must be EXACT or PREFIX")
                if rec.get("threat", "UNAUTH_ACCESS") not in ThreatClass.__members__:
                    bad.append(f"{where}: unknown threat class {rec.get('threat')!r}")
            for acl in (p.read_acl, p.write_acl):
                for res, principals in acl.items():
                    for pr in principals:
                        if pr not in principal_names:
                            bad.append(f"platform {p.name}: unknown principal {pr!r} in ACL")
        for a in self.agents:
            if a.start not in platform_names:
                bad.append(f"agent {a.name}: unknown start platform {a.start!r}")
            if a.owner not in owner_names:
                bad.append(f"agent {a.name}: unknown owner {a.owner!r}")
            if a.credential not in ("auto", "forged"):
                bad.append(f"agent {a.name}: credential must be auto or forged")
            if (a.program is None) == (a.program_hex is None):
                bad.append(f"agent {a.name}: give exactly one of program or program_hex")
                continue
            try:
                code = self._agent_code(a)
                decode_program(code)
            except ValueError as exc:
                bad.append(f"agent {a.name}: {exc}")
        agent_names = {a.name for a in self.agents}
        for d in self.disputes:
            if d.denier not in agent_names:
                bad.append(f"dispute at tick {d.tick}: unknown denier {d.denier!r}")
            try:
                bytes.fromhex(d.payload)
            except ValueError:
                bad.append(f"dispute at tick {d.tick}: payload is not hex")
        if self.settings.sealing_key is not None:
            bad.extend(_check_key(self.settings.sealing_key, "settings.sealing_key"))
        for o in self.owners:
            if o.key is not None:
                bad.extend(_check_key(o.key, f"owner {o.name}"))
        return bad

    @staticmethod
    def _agent_code(spec: AgentSpec) -> bytes:
        if spec.program_hex is not None:
            return bytes.fromhex(spec.program_hex)
        return assemble(spec.program or "")

    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        s = self.settings
        doc: dict = {"settings": {
            "seed": s.seed, "max_ticks": s.max_ticks, "slice": s.slice,
            "pattern_capacity": s.pattern_capacity, "sealing": s.sealing,
            "tracing": s.tracing, "verify_on_admit": s.verify_on_admit,
            "flood_threshold": s.flood_threshold, "quota": s.quota,
        }}
        if s.sealing_key is not None:
            doc["settings"]["sealing_key"] = s.sealing_key
        doc["platforms"] = []
        for p in self.platforms:
            entry: dict = {"name": p.name}
            if p.key is not None:
                entry["key"] = p.key
            if p.quota is not None:
                entry["quota"] = p.quota
            if p.flood_threshold is not None:
                entry["flood_threshold"] = p.flood_threshold
            if p.resources:
                entry["resources"] = dict(p.resources)
            policy = {}
            if p.read_acl:
                policy["read"] = {k: list(v) for k, v in p.read_acl.items()}
            if p.write_acl:
                policy["write"] = {k: list(v) for k, v in p.write_acl.items()}
            if p.senders is not None:
                policy["senders"] = list(p.senders)
            if p.migrators is not None:
                policy["migrators"] = list(p.migrators)
            if policy:
                entry["policy"] = policy
            if p.malicious != "none":
                entry["malicious"] = p.malicious
            if p.alter is not None:
                entry["alter"] = dict(p.alter)
            if p.patterns:
                entry["patterns"] = [dict(rec) for rec in p.patterns]
            doc["platforms"].append(entry)
        doc["agents"] = []
        for a in self.agents:
            entry = {"name": a.name, "owner": a.owner, "start": a.start}
            if a.program is not None:
                entry["program"] = a.program
            if a.program_hex is not None:
                entry["program_hex"] = a.program_hex
            if a.credential != "auto":
                entry["credential"] = a.credential
            if a.queue:
                entry["queue"] = list(a.queue)
            doc["agents"].append(entry)
        doc["owners"] = [
            {"name": o.name, **({"key": o.key} if o.key is not None else {})}
            for o in self.owners
        ]
        if self.disputes:
            doc["disputes"] = [
                {"tick": d.tick, "denier": d.denier, "claim_tick": d.claim_tick,
                 "kind": d.kind, "target": d.target, "payload": d.payload}
                for d in self.disputes
            ]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        sdoc = dict(doc.get("settings") or {})
        settings = Settings(
            seed=int(sdoc.get("seed", 0)),
            max_ticks=int(sdoc.get("max_ticks", 1000)),
            slice=int(sdoc.get("slice", 1)),
            pattern_capacity=int(sdoc.get("pattern_capacity", 1024)),
            sealing=bool(sdoc.get("sealing", False)),
            tracing=bool(sdoc.get("tracing", True)),
            verify_on_admit=bool(sdoc.get("verify_on_admit", True)),
            flood_threshold=int(sdoc.get("flood_threshold", 0)),
            quota=int(sdoc.get("quota", 10_000)),
            sealing_key=sdoc.get("sealing_key"),
        )
        platforms = []
        for pdoc in doc.get("platforms") or []:
            policy = pdoc.get("policy") or {}
            platforms.append(PlatformSpec(
                name=str(pdoc.get("name", "")),
                key=pdoc.get("key"),
                quota=pdoc.get("quota"),
                flood_threshold=pdoc.get("flood_threshold"),
                resources={int(k): int(v) for k, v in (pdoc.get("resources") or {}).items()},
                read_acl={int(k): list(v) for k, v in (policy.get("read") or {}).items()},
                write_acl={int(k): list(v) for k, v in (policy.get("write") or {}).items()},
                senders=list(policy["senders"]) if policy.get("senders") is not None else None,
                migrators=list(policy["migrators"]) if policy.get("migrators") is not None else None,
                malicious=str(pdoc.get("malicious", "alter" if pdoc.get("alter") else "none")),
                alter=pdoc.get("alter"),
                patterns=[dict(rec) for rec in (pdoc.get("patterns") or [])],
            ))
        agents = [
            AgentSpec(
                name=str(adoc.get("name", "")),
                owner=str(adoc.get("owner", "")),
                start=str(adoc.get("start", "")),
                program=adoc.get("program"),
                program_hex=adoc.get("program_hex"),
                credential=str(adoc.get("credential", "auto")),
                queue=[int(v) for v in (adoc.get("queue") or [])],
            )
            for adoc in doc.get("agents") or []
        ]
        owners = [OwnerSpec(name=str(o.get("name", "")), key=o.get("key"))
                  for o in doc.get("owners") or []]
        disputes = [
            DisputeSpec(tick=int(d["tick"]), denier=str(d["denier"]),
                        claim_tick=int(d["claim_tick"]), kind=int(d["kind"]),
                        target=int(d["target"]), payload=str(d.get("payload", "")))
            for d in doc.get("disputes") or []
        ]
        return cls(settings, platforms, agents, owners, disputes)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict):
            raise ScenarioInvalid(["scenario document must be a mapping"])
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_yaml())


def _check_key(key_hex: str, what: str) -> list[str]:
    try:
        if len(bytes.fromhex(key_hex)) != KEY_LEN:
            return [f"{what}: key must be {KEY_LEN} bytes of hex"]
    except ValueError:
        return [f"{what}: key is not hex"]
    return []


class Simulation:
    """A built scenario: platforms instantiated, credentials issued, PRNG
    seeded.  `run` executes the tick loop and returns the event log."""

    def __init__(self, scenario: Scenario, seed: int | None = None):
        violations = scenario.validate()
        if violations:
            raise ScenarioInvalid(violations)
        self.scenario = scenario
        self.settings = scenario.settings
        self.seed = scenario.settings.seed if seed is None else seed
        self.rng = SplitMix64(self.seed)
        self.registry = KeyRegistry(HmacScheme())
        if scenario.settings.sealing_key is not None:
            self.registry.sealing_key = bytes.fromhex(scenario.settings.sealing_key)

        self.names: dict[bytes, str] = {}
        self.owner_ids: dict[str, bytes] = {}
        for o in scenario.owners:
            oid = principal_id(o.name)
            self.owner_ids[o.name] = oid
            self.names[oid] = o.name
            self.registry.register_owner(oid, bytes.fromhex(o.key) if o.key else None)

        self.platforms: list[Platform] = []  # declaration order: MIGRATE index space
        self.platform_ids: dict[str, bytes] = {}
        for p in scenario.platforms:
            pid = principal_id(p.name)
            self.platform_ids[p.name] = pid
            self.names[pid] = p.name
            self.registry.register_platform(pid, bytes.fromhex(p.key) if p.key else None)
            policy = AccessPolicy()
            for res, principals in p.read_acl.items():
                policy.allow_read(res, *[principal_id(x) for x in principals])
            for res, principals in p.write_acl.items():
                policy.allow_write(res, *[principal_id(x) for x in principals])
            if p.senders is not None:
                policy.senders = frozenset(principal_id(x) for x in p.senders)
            if p.migrators is not None:
                policy.migrators = frozenset(principal_id(x) for x in p.migrators)
            alter = None
            mode = MaliciousMode(p.malicious)
            if mode is MaliciousMode.ALTER:
                alter = AlterConfig(int(p.alter["slot"]), int(p.alter["value"]),
                                    int(p.alter["after_step"]))
            platform = Platform(
                platform_id=pid,
                resources=dict(p.resources),
                policy=policy,
                quota=p.quota if p.quota is not None else scenario.settings.quota,
                malicious=mode,
                alter=alter,
                flood_threshold=p.flood_threshold,
                pattern_capacity=scenario.settings.pattern_capacity,
            )
            for rec in p.patterns:
                platform.log.insert(PatternRecord(
                    pattern=bytes.fromhex(str(rec["pattern"])),
                    match_mode=MatchMode[rec.get("mode", "EXACT")],
                    threat_class=ThreatClass[rec.get("threat", "UNAUTH_ACCESS")],
                    source_agent=pid,
                    first_seen=0,
                ))
            self.platforms.append(platform)
        self.platform_by_id = {p.platform_id: p for p in self.platforms}
        # scheduling visits platforms in ascending id order
        self.schedule_order = sorted(self.platforms, key=lambda p: p.platform_id)

        self.agent_ids: list[bytes] = []  # SEND target index space
        self.agent_specs: dict[bytes, AgentSpec] = {}
        self.agent_code: dict[bytes, bytes] = {}
        self.agent_credentials = {}
        for a in scenario.agents:
            aid = principal_id(a.name)
            self.agent_ids.append(aid)
            self.names[aid] = a.name
            self.agent_specs[aid] = a
            code = Scenario._agent_code(a)
            self.agent_code[aid] = code
            owner_id = self.owner_ids[a.owner]
            if a.credential == "forged":
                forger = KeyRegistry(self.registry.scheme)
                forger.register_owner(owner_id, derive_key("owner", b"__forger__"))
                cred = issue_credential(aid, owner_id, code, forger)
            else:
                cred = issue_credential(aid, owner_id, code, self.registry)
            self.agent_credentials[aid] = cred

        self.events = EventLog()
        self.hop_store: dict[tuple[bytes, int], HopRecord] = {}
        self.ctx = PlatformContext(
            registry=self.registry,
            events=self.events,
            slice_size=scenario.settings.slice,
            sealing=scenario.settings.sealing,
            tracing=scenario.settings.tracing,
            verify_on_admit=scenario.settings.verify_on_admit,
            flood_threshold=scenario.settings.flood_threshold,
            pattern_capacity=scenario.settings.pattern_capacity,
            hop_store=self.hop_store,
            nonce_source=self.rng.next_bytes8,
            name_of=lambda ident: self.names.get(ident, ident.hex()),
            agent_by_index=lambda i: self.agent_ids[i] if 0 <= i < len(self.agent_ids) else None,
        )
        self.in_flight: list[tuple[object, int]] = []
        self.tick = 0
        self.ticks_run = 0

    # ------------------------------------------------------------------

    def run(self) -> EventLog:
        self._admit_fresh(0)
        tick = 0
        pending_disputes = sorted(self.scenario.disputes, key=lambda d: (d.tick, d.denier))
        while tick < self.settings.max_ticks:
            progress = False

            arrivals, self.in_flight = self.in_flight, []
            for pkg, target_index in arrivals:
                platform = self.platforms[target_index]
                self.events.append(events.migrate_in(
                    tick, self.ctx.display(platform.platform_id),
                    self.ctx.display(pkg.credential.agent_id), len(pkg.hops)))
                platform.admit_package(tick, pkg, self.ctx)
                progress = True

            for platform in self.schedule_order:
                for agent in list(platform.residents):
                    if not agent.runnable:
                        continue
                    before = agent.quota_used
                    departure = platform.run_slice(tick, agent, self.ctx)
                    if agent.quota_used != before or agent.status is not AgentStatus.RUNNING:
                        progress = True
                    if departure is not None:
                        pkg, target_index = departure
                        if 0 <= target_index < len(self.platforms):
                            self.in_flight.append((pkg, target_index))
                        else:
                            self.events.append(events.reject(
                                tick, self.ctx.display(platform.platform_id),
                                self.ctx.display(agent.agent_id),
                                "UNKNOWN_PLATFORM", f"migrate target index {target_index}"))

            remaining = []
            for d in pending_disputes:
                if d.tick == tick:
                    self._adjudicate(tick, d)
                    progress = True
                elif d.tick > tick:
                    remaining.append(d)
            pending_disputes = remaining

            tick += 1
            if self.in_flight or pending_disputes:
                continue
            live = any(a.runnable for p in self.platforms for a in p.residents)
            if not live or not progress:
                break
        self.ticks_run = tick
        return self.events

    def _admit_fresh(self, tick: int) -> None:
        for spec in self.scenario.agents:
            aid = principal_id(spec.name)
            platform = self.platforms[[p.name for p in self.scenario.platforms].index(spec.start)]
            platform.admit_fresh(tick, aid, self.agent_credentials[aid],
                                 self.agent_code[aid], self.ctx,
                                 initial_queue=spec.queue)

    def _adjudicate(self, tick: int, d: DisputeSpec) -> None:
        request = Request(op=0, kind=d.kind, target=d.target,
                          payload=bytes.fromhex(d.payload))
        from .crypto import sha256
        digest = sha256(normalize(request))
        claim = DisputeClaim(denier=principal_id(d.denier), request_digest=digest,
                             tick=d.claim_tick)
        outcome = DisputeOutcome.UNSUBSTANTIATED
        holder = None
        for platform in self.schedule_order:
            if resolve_dispute(claim, platform.audit, self.registry) is DisputeOutcome.REFUTED:
                outcome = DisputeOutcome.REFUTED
                holder = platform
                break
        self.events.append(events.dispute(tick, d.denier, d.claim_tick,
                                          digest.hex(), outcome.value))
        if holder is not None:
            holder._incident(tick, Incident(
                tick, ThreatClass.REPUDIATION, claim.denier, None,
                f"denied communication at tick {d.claim_tick} refuted by signed record",
                Countermeasure.DETECTION), self.ctx)

    # ------------------------------------------------------------------

    def itinerary(self, agent_name: str) -> list[HopRecord]:
        aid = principal_id(agent_name)
        hops = []
        hop = 0
        while (aid, hop) in self.hop_store:
            hops.append(self.hop_store[(aid, hop)])
            hop += 1
        return hops

    def origin_state(self, agent_name: str) -> AgentState:
        spec = self.agent_specs[principal_id(agent_name)]
        state = AgentState()
        if spec.queue:
            state.input_queue.extend(v & 0xFFFFFFFF for v in spec.queue)
        return state

    def find_platform(self, name: str) -> Platform:
        return self.platform_by_id[self.platform_ids[name]]


def run_scenario(scenario: Scenario, seed: int | None = None) -> tuple[EventLog, Simulation]:
    sim = Simulation(scenario, seed=seed)
    log = sim.run()
    return log, sim


def registry_from_scenario(scenario: Scenario) -> KeyRegistry:
    """Just the keys of a scenario, for offline verification."""
    registry = KeyRegistry(HmacScheme())
    if scenario.settings.sealing_key is not None:
        registry.sealing_key = bytes.fromhex(scenario.settings.sealing_key)
    for p in scenario.platforms:
        registry.register_platform(principal_id(p.name),
                                   bytes.fromhex(p.key) if p.key else None)
    for o in scenario.owners:
        registry.register_owner(principal_id(o.name),
                                bytes.fromhex(o.key) if o.key else None)
    return registry
