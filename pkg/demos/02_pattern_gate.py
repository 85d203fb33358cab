"""The malicious-request pattern gate: one detected incident blocks every
repeat, whether it is an unauthorized read or a request flood.

Run:
    python demos/02_pattern_gate.py
"""

from masim import run_scenario
from masim.threats import AttackKind, make_attack


def section(title):
    print(f"\n{'=' * 64}\n  {title}\n{'=' * 64}")


def show(log, *types):
    for row in log.rows:
        if row["type"] in types:
            tick = row["tick"]
            if row["type"] == "INCIDENT":
                print(f"  t={tick} INCIDENT {row['threat']}/{row['countermeasure']}"
                      f" pattern={row['pattern']}")
            elif row["type"] == "REQUEST_DENIED":
                print(f"  t={tick} DENIED  {row['op']} -> {row['reason']}"
                      + (f" (hit #{row['hits']})" if row["hits"] else ""))
            else:
                print(f"  t={tick} ALLOWED {row['op']} value={row['value']}")


def main():
    section("Unauthorized access: denied once by policy, then gated")
    frag = make_attack(AttackKind.UNAUTH_ACCESS, res=5, attempts=5)
    log, sim = run_scenario(frag.scenario)
    show(log, "REQUEST_ALLOWED", "REQUEST_DENIED", "INCIDENT")
    platform = sim.find_platform("P0")
    for rec in platform.log.records:
        print(f"  log record: pattern={rec.pattern.hex()} threat={rec.threat_class.name}"
              f" hits={rec.hit_count}")

    section("Request flood: the first repeat is detected, the rest never land")
    frag = make_attack(AttackKind.DOS_FLOOD, length=10)
    log, sim = run_scenario(frag.scenario)
    show(log, "REQUEST_ALLOWED", "REQUEST_DENIED", "INCIDENT")
    platform = sim.find_platform("P0")
    print(f"  pattern log holds {len(platform.log.records)} record(s) "
          f"after a flood of 10")


if __name__ == "__main__":
    main()
