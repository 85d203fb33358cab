"""Send an agent across five platforms, let one of them silently corrupt
its memory, then walk the retained traces to name the culprit.

Run:
    python demos/05_locating_a_malicious_host.py
"""

from masim import (
    AgentSpec,
    OwnerSpec,
    PlatformSpec,
    Scenario,
    Settings,
    decode_program,
    locate_malicious_hop,
    principal_id,
    run_scenario,
)


def itinerary_scenario(bad_hop: int) -> Scenario:
    platforms = []
    for i in range(5):
        if i == bad_hop:
            platforms.append(PlatformSpec(
                name=f"P{i}", malicious="alter",
                alter={"slot": 0, "value": 99, "after_step": 2}))
        else:
            platforms.append(PlatformSpec(name=f"P{i}"))
    lines = []
    for i in range(4):
        lines += [f"PUSH {10 + i}", "STORE 0", f"MIGRATE {i + 1}"]
    lines += ["PUSH 14", "STORE 0", "HALT"]
    return Scenario(
        # verification is deferred to the post-hoc audit so the full
        # itinerary completes
        settings=Settings(seed=3, max_ticks=60, verify_on_admit=False),
        platforms=platforms,
        agents=[AgentSpec(name="courier", owner="o0", start="P0",
                          program="\n".join(lines) + "\n")],
        owners=[OwnerSpec(name="o0")],
    )


def main():
    for bad_hop in range(5):
        scenario = itinerary_scenario(bad_hop)
        log, sim = run_scenario(scenario)
        hops = sim.itinerary("courier")
        program = decode_program(sim.agent_code[principal_id("courier")])
        located = locate_malicious_hop(hops, program,
                                       sim.origin_state("courier"), sim.registry)
        chain = " -> ".join(
            f"[P{h.hop_index}]" if h.hop_index == located else f" P{h.hop_index} "
            for h in hops)
        print(f"tampering at hop {bad_hop}: {chain}   located hop {located}")
    print("\nEach platform retained its hop's trace and state digests; "
          "replaying them from the\norigin pins the first hop whose declared "
          "outgoing state disagrees with its own trace.")


if __name__ == "__main__":
    main()
