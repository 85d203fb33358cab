import random

import pytest

from masim import (
    AgentSpec,
    EventLog,
    OwnerSpec,
    PlatformSpec,
    Scenario,
    ScenarioInvalid,
    Settings,
    Simulation,
    SplitMix64,
    replay_check,
    run_scenario,
)

from util import fairness_violations, random_scenario

# splitmix64 reference outputs for the standard constants, computed with an
# independent implementation and pinned.
SPLITMIX_SEED0 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
SPLITMIX_SEED42 = [0xBDD732262FEB6E95, 0x28EFE333B266F103, 0x47526757130F9F52]


def minimal_scenario(program="HALT\n", **settings):
    return Scenario(
        settings=Settings(seed=1, max_ticks=20, **settings),
        platforms=[PlatformSpec(name="P0")],
        agents=[AgentSpec(name="a0", owner="o0", start="P0", program=program)],
        owners=[OwnerSpec(name="o0")],
    )


class TestSplitMix:
    @pytest.mark.parametrize("seed,expected", [(0, SPLITMIX_SEED0), (42, SPLITMIX_SEED42)])
    def test_reference_sequence(self, seed, expected):
        rng = SplitMix64(seed)
        assert [rng.next_u64() for _ in range(3)] == expected

    def test_bytes_are_big_endian(self):
        assert SplitMix64(0).next_bytes8() == SPLITMIX_SEED0[0].to_bytes(8, "big")


class TestBuild:
    def test_minimal_builds(self):
        Simulation(minimal_scenario())

    def test_duplicate_id(self):
        scenario = minimal_scenario()
        scenario.agents.append(AgentSpec(name="a0", owner="o0", start="P0",
                                         program="HALT\n"))
        with pytest.raises(ScenarioInvalid) as exc:
            Simulation(scenario)
        assert any("duplicate" in v for v in exc.value.violations)

    def test_bad_program_names_line(self):
        scenario = minimal_scenario(program="PUSH 1\nWAT 3\nHALT\n")
        with pytest.raises(ScenarioInvalid) as exc:
            Simulation(scenario)
        assert any("line 2" in v for v in exc.value.violations)

    def test_unknown_start_platform(self):
        scenario = minimal_scenario()
        scenario.agents[0].start = "P9"
        with pytest.raises(ScenarioInvalid):
            Simulation(scenario)

    def test_yaml_round_trip(self):
        scenario = minimal_scenario()
        back = Scenario.from_yaml(scenario.to_yaml())
        assert back.to_dict() == scenario.to_dict()
        log_a, _ = run_scenario(scenario)
        log_b, _ = run_scenario(back)
        assert replay_check(log_a, log_b).identical


class TestRun:
    def test_halt_agent_log_shape(self):
        log, _ = run_scenario(minimal_scenario())
        assert [r["type"] for r in log.rows] == ["ADMIT", "STEP_SLICE", "HALT"]

    def test_same_seed_byte_identical(self):
        scenario = minimal_scenario(program="PUSH 1\nPUSH 2\nADD\nHALT\n")
        log_a, _ = run_scenario(scenario)
        log_b, _ = run_scenario(scenario)
        assert log_a.serialize() == log_b.serialize()
        assert replay_check(log_a, log_b).identical

    def test_two_agents_alternate_within_ticks(self):
        scenario = minimal_scenario(program="PUSH 1\nPUSH 2\nADD\nHALT\n")
        scenario.agents.append(AgentSpec(name="a1", owner="o0", start="P0",
                                         program="PUSH 1\nPUSH 2\nADD\nHALT\n"))
        log, _ = run_scenario(scenario)
        by_tick = {}
        for row in log.of_type("STEP_SLICE"):
            by_tick.setdefault(row["tick"], []).append(row["agent"])
        for tick, agents in by_tick.items():
            assert agents == ["a0", "a1"], f"tick {tick}"

    def test_migration_latency_one_tick(self):
        scenario = Scenario(
            settings=Settings(seed=1, max_ticks=20),
            platforms=[PlatformSpec(name="P0"), PlatformSpec(name="P1")],
            agents=[AgentSpec(name="a0", owner="o0", start="P0",
                              program="MIGRATE 1\nHALT\n")],
            owners=[OwnerSpec(name="o0")],
        )
        log, _ = run_scenario(scenario)
        out = next(r for r in log.rows if r["type"] == "MIGRATE_OUT")
        arrival = next(r for r in log.rows if r["type"] == "MIGRATE_IN")
        assert arrival["tick"] == out["tick"] + 1
        assert arrival["platform"] == "P1"

    def test_blocked_forever_run_terminates_early(self):
        scenario = minimal_scenario(program="RECV\nHALT\n")
        scenario.settings.max_ticks = 500
        log, sim = run_scenario(scenario)
        assert sim.ticks_run < 5
        assert log.of_type("STEP_SLICE")[-1]["outcome"] == "BLOCKED"

    def test_sends_unblock_receivers(self):
        scenario = Scenario(
            settings=Settings(seed=1, max_ticks=20),
            platforms=[PlatformSpec(name="P0")],
            agents=[
                AgentSpec(name="a0", owner="o0", start="P0",
                          program="SEND 1 7 0 0 0 5\nHALT\n"),
                AgentSpec(name="a1", owner="o0", start="P0",
                          program="RECV\nSTORE 0\nHALT\n"),
            ],
            owners=[OwnerSpec(name="o0")],
        )
        log, sim = run_scenario(scenario)
        receiver = sim.find_platform("P0").by_id[__import__("masim").principal_id("a1")]
        assert receiver.state.memory[0] == 5

    def test_carried_pattern_gates_on_next_platform_before_policy(self):
        # mallory's denial on P0 becomes a pattern; after mallory migrates,
        # P1 denies the same request from a DIFFERENT agent that P1's own
        # policy would have allowed: the gate fires first
        scenario = Scenario(
            settings=Settings(seed=1, max_ticks=30),
            platforms=[
                PlatformSpec(name="P0", resources={5: 7}),
                PlatformSpec(name="P1", resources={5: 8},
                             read_acl={5: ["local"]}),
            ],
            agents=[
                AgentSpec(name="mallory", owner="o0", start="P0",
                          program="READRES 5\nMIGRATE 1\nHALT\n"),
                AgentSpec(name="local", owner="o0", start="P1",
                          program="PUSH 1\nPUSH 1\nPUSH 1\nPUSH 1\nREADRES 5\nHALT\n"),
            ],
            owners=[OwnerSpec(name="o0")],
        )
        log, sim = run_scenario(scenario)
        local_rows = [r for r in log.rows if r.get("agent") == "local"
                      and r["type"].startswith("REQUEST")]
        assert len(local_rows) == 1
        assert local_rows[0]["type"] == "REQUEST_DENIED"
        assert local_rows[0]["reason"] == "PATTERN_MATCH"
        # and P1 raised no incident of its own: the one incident is P0's
        incidents = log.of_type("INCIDENT")
        assert [(r["platform"], r["threat"]) for r in incidents] == \
            [("P0", "UNAUTH_ACCESS")]

    def test_migrate_to_unknown_platform_rejects(self):
        scenario = minimal_scenario(program="MIGRATE 7\nHALT\n")
        log, _ = run_scenario(scenario)
        row = log.rows[-1]
        assert row["type"] == "REJECT" and row["reason"] == "UNKNOWN_PLATFORM"


class TestReplayCheck:
    def test_log_vs_itself(self):
        log, _ = run_scenario(minimal_scenario())
        assert replay_check(log, log).label() == "Identical"

    def test_empty_vs_empty(self):
        assert replay_check(EventLog(), EventLog()).identical

    def test_divergence_reports_first_row(self):
        log_a, _ = run_scenario(minimal_scenario())
        log_b, _ = run_scenario(minimal_scenario(program="PUSH 1\nHALT\n"))
        result = replay_check(log_a, log_b)
        assert not result.identical and result.first_divergence == 1

    def test_length_mismatch(self):
        log, _ = run_scenario(minimal_scenario())
        shorter = EventLog(log.rows[:-1])
        assert replay_check(log, shorter).first_divergence == len(log.rows) - 1

    def test_save_load_round_trip(self, tmp_path):
        log, _ = run_scenario(minimal_scenario())
        path = tmp_path / "events.jsonl"
        log.save(path)
        assert replay_check(log, EventLog.load(path)).identical


class TestInvariants:
    def test_fairness_one_slice_per_live_agent(self):
        for seed in range(25):
            scenario = random_scenario(random.Random(seed))
            log, _ = run_scenario(scenario)
            assert fairness_violations(log) == [], f"seed {seed}"

    def test_gate_precedence_over_policy(self):
        # once a pattern is in a platform's log, the same normalized request
        # never reaches the policy check again
        for seed in range(25):
            scenario = random_scenario(random.Random(500 + seed))
            log, _ = run_scenario(scenario)
            gated: set[tuple] = set()
            prev = None
            for row in log.rows:
                if row["type"] == "REQUEST_DENIED" and row["reason"] == "ACCESS_DENIED":
                    # the denial paired with its own incident row is the
                    # insertion point, not a gate bypass
                    own_incident = (prev is not None and prev["type"] == "INCIDENT"
                                    and prev["platform"] == row["platform"]
                                    and prev["agent"] == row["agent"]
                                    and prev["tick"] == row["tick"])
                    normalized = bytes([row["kind"], row["target"]]).hex() + row["payload"]
                    if not own_incident:
                        assert (row["platform"], normalized) not in gated, \
                            f"seed {seed}: policy consulted for a gated pattern"
                if row["type"] == "INCIDENT" and row.get("pattern"):
                    gated.add((row["platform"], row["pattern"]))
                prev = row

    def test_quota_bound_per_platform(self):
        for seed in range(25):
            scenario = random_scenario(random.Random(2000 + seed))
            log, sim = run_scenario(scenario)
            quota = scenario.settings.quota
            used: dict[tuple, int] = {}
            for row in log.of_type("STEP_SLICE"):
                key = (row["platform"], row["agent"])
                used[key] = used.get(key, 0) + row["steps"]
            assert all(v <= quota for v in used.values()), f"seed {seed}"

    def test_every_delivered_send_has_verifying_record(self):
        from masim.policy import verify_record
        for seed in range(10):
            scenario = random_scenario(random.Random(3000 + seed))
            log, sim = run_scenario(scenario)
            sends = [r for r in log.of_type("REQUEST_ALLOWED") if r["op"] == "SEND"]
            records = [(p, rec) for p in sim.platforms for rec in p.audit]
            send_digests = sorted(r["digest"] for r in sends)
            audit_send_digests = sorted(
                rec.request_digest.hex() for p, rec in records if rec.receiver_kind == 0)
            assert send_digests == audit_send_digests, f"seed {seed}"
            for platform, rec in records:
                assert verify_record(rec, platform.platform_id, sim.registry)

    def test_conservation_each_agent_one_place(self):
        for seed in range(25):
            scenario = random_scenario(random.Random(1000 + seed))
            log, sim = run_scenario(scenario)
            for spec in scenario.agents:
                locations = []
                for platform in sim.platforms:
                    agent = platform.by_id.get(
                        __import__("masim").principal_id(spec.name))
                    if agent is not None and agent.status.value != "GONE":
                        locations.append(platform)
                in_flight = [pkg for pkg, _ in sim.in_flight
                             if pkg.credential.agent_id ==
                             __import__("masim").principal_id(spec.name)]
                rejected = any(r["type"] == "REJECT" and r["agent"] == spec.name
                               for r in log.rows)
                assert len(locations) + len(in_flight) <= 1
                if not rejected:
                    assert len(locations) + len(in_flight) == 1
