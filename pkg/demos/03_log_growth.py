"""Why keep a pattern log instead of every execution trace: trace storage
grows with every executed statement, the pattern log only with distinct
malicious patterns.

Run:
    python demos/03_log_growth.py
"""

from masim import AgentSpec, OwnerSpec, PlatformSpec, Scenario, Settings, run_scenario
from masim.report import generate_report, render_table


def build(benign_agents: int):
    benign = "\n".join(["PUSH 1"] * 99 + ["HALT"]) + "\n"
    malicious = "READRES 5\nREADRES 6\nREADRES 7\nREADRES 5\nREADRES 6\nHALT\n"
    agents = [AgentSpec(name=f"b{i:04d}", owner="ob", start="P0", program=benign)
              for i in range(benign_agents)]
    agents.append(AgentSpec(name="mallory", owner="om", start="P0", program=malicious))
    return Scenario(
        settings=Settings(seed=5, max_ticks=10, slice=100),
        platforms=[PlatformSpec(name="P0", resources={5: 1, 6: 2, 7: 3})],
        agents=agents,
        owners=[OwnerSpec(name="ob"), OwnerSpec(name="om")],
    )


def main():
    print(f"{'benign agents':>14} {'trace bytes':>12} {'pattern bytes':>14} {'ratio':>10}")
    for n in (10, 100, 1000):
        log, sim = run_scenario(build(n))
        report = generate_report(log.rows)
        print(f"{n:>14} {report.trace_bytes:>12} {report.pattern_log_bytes:>14} "
              f"{report.bytes_ratio:>10.1f}")
    print("\nTrace storage scales with execution volume; the pattern log "
          "stays at 3 records\n(the malicious agent's 3 distinct requests) "
          "no matter how much benign work runs.\n")
    print("Full report for the 1000-agent run:\n")
    log, _ = run_scenario(build(1000))
    print(render_table(generate_report(log.rows)))


if __name__ == "__main__":
    main()
