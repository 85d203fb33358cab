"""Execution tracing end to end: run an agent, fingerprint the trace,
then show that replay verification catches every kind of tampering.

Run:
    python demos/01_tracing_and_tampering.py
"""

from masim import (
    AgentState,
    ExecutionTrace,
    KeyRegistry,
    ScriptedEnv,
    TraceEntry,
    assemble,
    decode_program,
    execute,
    make_fingerprint,
    principal_id,
    state_digest,
    verify_trace,
)


def section(title):
    print(f"\n{'=' * 64}\n  {title}\n{'=' * 64}")


PROGRAM = """\
PUSH 40
PUSH 2
ADD
STORE 0     # memory[0] = 42
READRES 5   # ask the platform for resource 5
STORE 1
HALT
"""


def main():
    registry = KeyRegistry()
    platform = principal_id("platform-A")
    agent = principal_id("agent-1")
    registry.register_platform(platform)

    section("An honest run")
    program = decode_program(assemble(PROGRAM))
    state = AgentState()
    initial = state.clone()
    final, entries, outcome = execute(state, program, ScriptedEnv([7]), 100)
    print(f"outcome: {outcome.label()}, {len(entries)} statements executed")
    print(f"memory[0]={final.memory[0]}  memory[1]={final.memory[1]}")
    for e in entries:
        flag = f" consumed {e.input_value}" if e.input_flag else ""
        print(f"  seq={e.seq} pc={e.pc} opcode=0x{e.opcode:02x}{flag}")

    section("Fingerprinting")
    trace = ExecutionTrace(agent, platform, 0, tuple(entries))
    fp = make_fingerprint(trace, registry)
    claimed = state_digest(final)
    print(f"trace encodes to {len(trace.encode())} bytes")
    print(f"digest    {fp.digest.hex()}")
    print(f"signature {fp.signature.hex()}")

    section("Verification by replay")
    verdict = verify_trace(program, initial, trace, fp, claimed, registry)
    print(f"honest trace: {verdict.label()}")

    # 1. rewrite a statement identifier and re-sign: replay disagrees
    doctored = list(entries)
    doctored[2] = TraceEntry(2, 5, doctored[2].opcode, 0, 0)
    bad_trace = ExecutionTrace(agent, platform, 0, tuple(doctored))
    bad_fp = make_fingerprint(bad_trace, registry)
    print("statement rewritten + re-signed:",
          verify_trace(program, initial, bad_trace, bad_fp, claimed, registry).label())

    # 2. lie about the input the platform fed to READRES
    doctored = list(entries)
    doctored[4] = TraceEntry(4, doctored[4].pc, doctored[4].opcode, 1, 9999)
    bad_trace = ExecutionTrace(agent, platform, 0, tuple(doctored))
    bad_fp = make_fingerprint(bad_trace, registry)
    print("READRES value forged (state digest gives it away):",
          verify_trace(program, initial, bad_trace, bad_fp, claimed, registry).label())

    # 3. mutate agent state without touching the trace (the lazy tamperer)
    tampered_final = final.clone()
    tampered_final.memory[0] = 13
    print("state mutated behind the trace's back:",
          verify_trace(program, initial, trace, fp,
                       state_digest(tampered_final), registry).label())

    # 4. flip one bit of the signature
    flipped = bytes([fp.signature[0] ^ 1]) + fp.signature[1:]
    from masim import Fingerprint
    print("one signature bit flipped:",
          verify_trace(program, initial, trace,
                       Fingerprint(fp.digest, flipped, platform),
                       claimed, registry).label())


if __name__ == "__main__":
    main()
