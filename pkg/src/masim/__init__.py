"""masim: a deterministic simulator of a multi-platform mobile-agent
system with per-hop execution tracing, signed trace fingerprints, and a
malicious-request pattern log that gates every communication."""

from .bytecode import (
    AgentState,
    Program,
    Request,
    ScriptedEnv,
    TraceEntry,
    assemble,
    decode_program,
    encode_state,
    execute,
    state_digest,
    step,
)
from .crypto import KeyRegistry, principal_id
from .events import EventLog, ReplayResult, replay_check
from .host import (
    AlterConfig,
    Countermeasure,
    Incident,
    MaliciousMode,
    MigrationPackage,
    Platform,
    PlatformContext,
)
from .patterns import MaliciousLog, MatchMode, PatternRecord, ThreatClass, normalize
from .policy import (
    AccessPolicy,
    Credential,
    DisputeClaim,
    DisputeOutcome,
    authenticate,
    authorize,
    issue_credential,
    resolve_dispute,
    seal_payload,
    unseal_payload,
)
from .report import Report, generate_report, render_table
from .sim import (
    AgentSpec,
    DisputeSpec,
    OwnerSpec,
    PlatformSpec,
    Scenario,
    ScenarioInvalid,
    Settings,
    Simulation,
    SplitMix64,
    run_scenario,
)
from .threats import AttackFragment, AttackKind, make_attack
from .tracing import (
    ExecutionTrace,
    Fingerprint,
    HopRecord,
    Verdict,
    VerdictKind,
    fingerprint,
    locate_malicious_hop,
    make_fingerprint,
    sign_fingerprint,
    verify_trace,
    verify_trace_bytes,
)

__version__ = "0.1.0"
