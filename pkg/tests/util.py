"""Shared test helpers: seeded random programs and scenarios."""

from __future__ import annotations

import random

from masim import AgentSpec, OwnerSpec, PlatformSpec, Scenario, Settings

_SIZES = {"PUSH": 5, "ADD": 1, "SUB": 1, "LOAD": 2, "STORE": 2, "RECV": 1,
          "READRES": 2, "WRITERES": 2, "JMPZ": 3, "HALT": 1}


def random_program_text(rng: random.Random, max_instructions: int = 100) -> str:
    """A random program biased toward runs that survive a while: a static
    stack-depth estimate gates consumers, and JMPZ only jumps forward."""
    n = rng.randint(4, max_instructions)
    chosen: list[tuple] = []
    depth = 0
    for i in range(n - 1):
        options = [("PUSH", 26), ("LOAD", 12), ("RECV", 6), ("READRES", 8), ("SEND", 6)]
        if depth >= 1:
            options += [("STORE", 12), ("WRITERES", 5), ("JMPZ", 8)]
        if depth >= 2:
            options += [("ADD", 10), ("SUB", 10)]
        if i > n // 2:
            options.append(("HALT", 2))
        names = [o[0] for o in options]
        weights = [o[1] for o in options]
        op = rng.choices(names, weights=weights)[0]
        if op == "SEND":
            payload = tuple(rng.randint(0, 255) for _ in range(rng.randint(0, 4)))
            chosen.append((op, rng.randint(0, 5), rng.randint(0, 20), payload))
        elif op == "PUSH":
            chosen.append((op, rng.randint(0, 2**32 - 1)))
            depth = min(depth + 1, 256)
        elif op in ("LOAD", "STORE"):
            chosen.append((op, rng.randint(0, 255)))
            depth += 1 if op == "LOAD" else -1
        elif op in ("READRES", "WRITERES"):
            chosen.append((op, rng.randint(0, 20)))
            depth += 1 if op == "READRES" else -1
        elif op == "RECV":
            chosen.append((op,))
            depth += 1
        elif op in ("ADD", "SUB"):
            chosen.append((op,))
            depth -= 1
        elif op == "JMPZ":
            chosen.append((op, None))  # target patched below
            depth -= 1
        else:
            chosen.append(("HALT",))
    chosen.append(("HALT",))

    def size(item) -> int:
        if item[0] == "SEND":
            return 4 + len(item[3])
        return _SIZES[item[0]]

    offsets, off = [], 0
    for item in chosen:
        offsets.append(off)
        off += size(item)

    lines = []
    for i, item in enumerate(chosen):
        op = item[0]
        if op == "JMPZ":
            target = rng.randint(i + 1, len(chosen) - 1)
            delta = offsets[target] - (offsets[i] + 3)
            lines.append(f"JMPZ {delta}")
        elif op == "SEND":
            parts = ["SEND", str(item[1]), str(item[2])] + [str(b) for b in item[3]]
            lines.append(" ".join(parts))
        elif len(item) == 2:
            lines.append(f"{op} {item[1]}")
        else:
            lines.append(op)
    return "\n".join(lines) + "\n"


def flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def fairness_violations(log) -> list[str]:
    """Check, from the event log alone, that within every tick each live
    admitted agent received exactly one slice.

    Admissions happen before the tick's slices, so an agent admitted at
    tick t must already be sliced at t; terminal outcomes take effect for
    the following tick.
    """
    rows_by_tick: dict[int, list[dict]] = {}
    for row in log.rows:
        rows_by_tick.setdefault(row["tick"], []).append(row)
    live: dict[str, bool] = {}
    violations = []
    for tick in sorted(rows_by_tick):
        rows = rows_by_tick[tick]
        counts: dict[str, int] = {}
        for row in rows:
            if row["type"] == "ADMIT":
                live[row["agent"]] = True
            elif row["type"] == "STEP_SLICE":
                counts[row["agent"]] = counts.get(row["agent"], 0) + 1
        for agent, alive in live.items():
            if alive and counts.get(agent, 0) != 1:
                violations.append(
                    f"tick {tick}: {agent} got {counts.get(agent, 0)} slices")
        for row in rows:
            if row["type"] == "QUOTA_KILL":
                live[row["agent"]] = False
            elif row["type"] == "STEP_SLICE":
                outcome = row["outcome"]
                if outcome in ("HALTED", "MIGRATING") or outcome.startswith("FAULT"):
                    live[row["agent"]] = False
    return violations


def random_scenario(rng: random.Random) -> Scenario:
    """A small random multi-agent scenario for fairness/conservation runs."""
    n_platforms = rng.randint(1, 3)
    platforms = [PlatformSpec(name=f"P{i}", resources={0: rng.randint(0, 99)},
                              read_acl={0: ["owner-r"]})
                 for i in range(n_platforms)]
    agents = []
    for i in range(rng.randint(2, 5)):
        body = random_program_text(rng, max_instructions=30)
        agents.append(AgentSpec(
            name=f"a{i}", owner="owner-r", start=f"P{rng.randrange(n_platforms)}",
            program=body,
            queue=[rng.randint(0, 1000) for _ in range(rng.randint(0, 3))],
        ))
    return Scenario(
        settings=Settings(seed=rng.getrandbits(63), max_ticks=rng.randint(10, 40),
                          slice=rng.randint(1, 3), quota=rng.randint(20, 200)),
        platforms=platforms,
        agents=agents,
        owners=[OwnerSpec(name="owner-r")],
    )
