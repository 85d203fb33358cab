"""Command-line entry points.

    masim run <scenario.yaml> [--seed N | --seed-range A:B]
              [--events PATH] [--report PATH] [--pattern-log PATH] [--traces DIR]
    masim verify --package PATH [--scenario PATH]
    masim verify --trace PATH --fingerprint PATH --program PATH
                 --initial-state PATH [--final-digest HEX] [--scenario PATH]
    masim report <events.jsonl> [--out PATH] [--capacity N]

Exit status: 0 on success, 1 on verification failure, 2 on input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .bytecode import decode_program, decode_state
from .crypto import DefaultKeyRegistry
from .events import EventLog
from .host import MigrationPackage
from .patterns import DEFAULT_CAPACITY, MaliciousLog, MalformedLog
from .policy import AuthFailure, authenticate
from .report import generate_report, render_table
from .sim import Scenario, ScenarioInvalid, Simulation, registry_from_scenario
from .tracing import verify_trace_bytes

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_INPUT_ERROR = 2


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="masim",
                                     description="mobile-agent security simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("scenario", type=Path)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's seed")
    p_run.add_argument("--seed-range", default=None, metavar="A:B",
                       help="run every seed in the inclusive range, outputs keyed by seed")
    p_run.add_argument("--events", type=Path, default=None,
                       help="write the event log here (a directory with --seed-range)")
    p_run.add_argument("--report", type=Path, default=None,
                       help="write the structured report here")
    p_run.add_argument("--pattern-log", type=Path, default=None,
                       help="write the merged pattern log (binary) here")
    p_run.add_argument("--traces", type=Path, default=None,
                       help="dump per-hop trace/fingerprint/state files into this directory")
    p_run.add_argument("--quiet", action="store_true")

    p_verify = sub.add_parser("verify", help="offline verification")
    p_verify.add_argument("--package", type=Path, default=None)
    p_verify.add_argument("--trace", type=Path, default=None)
    p_verify.add_argument("--fingerprint", type=Path, default=None)
    p_verify.add_argument("--program", type=Path, default=None)
    p_verify.add_argument("--initial-state", type=Path, default=None)
    p_verify.add_argument("--final-digest", default=None, metavar="HEX")
    p_verify.add_argument("--scenario", type=Path, default=None,
                          help="scenario file supplying the key registry")

    p_report = sub.add_parser("report", help="summarize an event log")
    p_report.add_argument("events", type=Path)
    p_report.add_argument("--out", type=Path, default=None)
    p_report.add_argument("--capacity", type=int, default=DEFAULT_CAPACITY)
    p_report.add_argument("--pattern-log", type=Path, default=None,
                          help="saved pattern-log file to report instead of "
                               "reconstructing from events")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_report(args)
    except (OSError, ScenarioInvalid, MalformedLog, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


def _registry(args) -> DefaultKeyRegistry:
    registry = DefaultKeyRegistry()
    if args.scenario is not None:
        base = registry_from_scenario(Scenario.load(args.scenario))
        registry.platform_keys.update(base.platform_keys)
        registry.owner_keys.update(base.owner_keys)
        registry.sealing_key = base.sealing_key
    return registry


def _cmd_run(args) -> int:
    scenario = Scenario.load(args.scenario)
    if args.seed_range is not None:
        try:
            lo, hi = (int(x) for x in args.seed_range.split(":", 1))
        except ValueError:
            raise ValueError("--seed-range must look like A:B") from None
        for seed in range(lo, hi + 1):
            sub = argparse.Namespace(**vars(args))
            sub.seed_range = None
            sub.seed = seed
            if args.events is not None:
                args.events.mkdir(parents=True, exist_ok=True)
                sub.events = args.events / f"events-{seed}.jsonl"
            if args.report is not None:
                args.report.parent.mkdir(parents=True, exist_ok=True)
                sub.report = args.report.parent / f"{args.report.stem}-{seed}{args.report.suffix}"
            _run_one(scenario, sub)
        return EXIT_OK
    return _run_one(scenario, args)


def _run_one(scenario: Scenario, args) -> int:
    sim = Simulation(scenario, seed=args.seed)
    log = sim.run()
    if args.events is not None:
        log.save(args.events)
    report = generate_report(log.rows, capacity=scenario.settings.pattern_capacity)
    if args.report is not None:
        with open(args.report, "w", encoding="utf-8") as fh:
            yaml.safe_dump(report.to_dict(), fh, sort_keys=False)
    if args.pattern_log is not None:
        merged = MaliciousLog(capacity=scenario.settings.pattern_capacity)
        for platform in sim.schedule_order:
            merged = merged.merged_with(platform.log)
        args.pattern_log.write_bytes(merged.serialize())
    if args.traces is not None:
        args.traces.mkdir(parents=True, exist_ok=True)
        dumped_programs = set()
        for (agent_id, hop), record in sorted(sim.hop_store.items()):
            name = sim.names.get(agent_id, agent_id.hex())
            (args.traces / f"{name}-hop{hop}.trace").write_bytes(record.trace.encode())
            (args.traces / f"{name}-hop{hop}.fp").write_bytes(record.fp.encode())
            if record.initial_state is not None:
                from .bytecode import encode_state
                (args.traces / f"{name}-hop{hop}.state").write_bytes(
                    encode_state(record.initial_state))
            if name not in dumped_programs:
                (args.traces / f"{name}.bin").write_bytes(sim.agent_code[agent_id])
                dumped_programs.add(name)
    if not args.quiet:
        print(f"seed {sim.seed}: {len(log)} event rows over {sim.ticks_run} tick(s)")
        print(render_table(report))
    return EXIT_OK


def _cmd_verify(args) -> int:
    if args.package is not None:
        return _verify_package(args)
    needed = (args.trace, args.fingerprint, args.program, args.initial_state)
    if any(x is None for x in needed):
        print("error: verify needs --package or all of "
              "--trace/--fingerprint/--program/--initial-state", file=sys.stderr)
        return EXIT_INPUT_ERROR
    registry = _registry(args)
    program = decode_program(args.program.read_bytes())
    initial_state = decode_state(args.initial_state.read_bytes())
    claimed = bytes.fromhex(args.final_digest) if args.final_digest else None
    verdict = verify_trace_bytes(
        args.trace.read_bytes(), args.fingerprint.read_bytes(),
        program, initial_state, registry, claimed_final_digest=claimed)
    print(f"trace verdict: {verdict.label()}")
    return EXIT_OK if verdict.verified else EXIT_VERIFICATION_FAILED


def _verify_package(args) -> int:
    registry = _registry(args)
    data = args.package.read_bytes()
    try:
        pkg = MigrationPackage.decode(data)
    except ValueError as exc:
        print(f"package verdict: BAD_PACKAGE ({exc})")
        return EXIT_VERIFICATION_FAILED
    checks: list[tuple[str, bool, str]] = []
    sig_ok = registry.verify_platform(pkg.sender_platform_id,
                                      pkg.signing_message(), pkg.signature)
    checks.append(("platform signature", sig_ok, "BAD_PACKAGE_SIGNATURE"))
    identity = authenticate(pkg.credential, pkg.program_code, registry)
    auth_ok = not isinstance(identity, AuthFailure)
    checks.append(("credential", auth_ok,
                   identity.reason.value if isinstance(identity, AuthFailure) else ""))
    state_ok = False
    try:
        from .bytecode import state_digest
        state_ok = state_digest(decode_state(pkg.state_bytes)) == pkg.state_digest
    except ValueError:
        state_ok = False
    checks.append(("state digest", state_ok, "CHAIN_BROKEN"))
    all_ok = True
    for label, ok, detail in checks:
        suffix = "" if ok or not detail else f" ({detail})"
        print(f"  {label:<20} {'ok' if ok else 'FAIL'}{suffix}")
        all_ok = all_ok and ok
    print(f"package verdict: {'VERIFIED' if all_ok else 'REJECTED'}")
    return EXIT_OK if all_ok else EXIT_VERIFICATION_FAILED


def _cmd_report(args) -> int:
    log = EventLog.load(args.events)
    saved = None
    if args.pattern_log is not None:
        saved = MaliciousLog.deserialize(args.pattern_log.read_bytes(),
                                         capacity=args.capacity)
    report = generate_report(log.rows, capacity=args.capacity, pattern_log=saved)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            yaml.safe_dump(report.to_dict(), fh, sort_keys=False)
    print(render_table(report))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
