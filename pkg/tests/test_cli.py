import yaml

from masim.bytecode import AgentState, state_digest
from masim.cli import main
from masim.events import EventLog
from masim.threats import AttackKind, make_attack


def write_scenario(tmp_path, kind=AttackKind.UNAUTH_ACCESS, **params):
    frag = make_attack(kind, **params)
    path = tmp_path / "scenario.yaml"
    frag.scenario.save(path)
    return path, frag


class TestRun:
    def test_run_writes_events_and_report(self, tmp_path, capsys):
        scenario, _ = write_scenario(tmp_path)
        events = tmp_path / "events.jsonl"
        report = tmp_path / "report.yaml"
        rc = main(["run", str(scenario), "--events", str(events),
                   "--report", str(report)])
        assert rc == 0
        assert len(EventLog.load(events)) > 0
        doc = yaml.safe_load(report.read_text())
        assert doc["incidents"]["UNAUTH_ACCESS"]["DETECTION"] == 1
        assert "pattern_gate" in capsys.readouterr().out

    def test_seed_flag_overrides(self, tmp_path):
        scenario, _ = write_scenario(tmp_path, kind=AttackKind.EAVESDROP)
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        assert main(["run", str(scenario), "--events", str(a), "--quiet"]) == 0
        assert main(["run", str(scenario), "--events", str(b), "--seed", "99",
                     "--quiet"]) == 0
        assert a.read_bytes() != b.read_bytes()

    def test_seed_range_keys_outputs(self, tmp_path):
        scenario, _ = write_scenario(tmp_path, kind=AttackKind.EAVESDROP)
        outdir = tmp_path / "runs"
        rc = main(["run", str(scenario), "--seed-range", "3:5",
                   "--events", str(outdir), "--quiet"])
        assert rc == 0
        assert sorted(p.name for p in outdir.iterdir()) == \
            ["events-3.jsonl", "events-4.jsonl", "events-5.jsonl"]

    def test_bad_scenario_exits_2(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("agents:\n  - name: x\n    owner: ghost\n    start: nowhere\n"
                        "    program: HALT\n")
        assert main(["run", str(path)]) == 2

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.yaml")]) == 2

    def test_pattern_log_dump_round_trips(self, tmp_path):
        scenario, _ = write_scenario(tmp_path)
        out = tmp_path / "patterns.bin"
        assert main(["run", str(scenario), "--pattern-log", str(out),
                     "--quiet"]) == 0
        from masim.patterns import MaliciousLog
        log = MaliciousLog.deserialize(out.read_bytes())
        assert [r.pattern.hex() for r in log.records] == ["0805"]


class TestVerify:
    def test_trace_verifies_from_files(self, tmp_path):
        scenario, _ = write_scenario(tmp_path, kind=AttackKind.UNAUTH_ACCESS)
        traces = tmp_path / "traces"
        assert main(["run", str(scenario), "--traces", str(traces), "--quiet"]) == 0
        rc = main(["verify",
                   "--trace", str(traces / "mallory-hop0.trace"),
                   "--fingerprint", str(traces / "mallory-hop0.fp"),
                   "--program", str(traces / "mallory.bin"),
                   "--initial-state", str(traces / "mallory-hop0.state"),
                   "--scenario", str(scenario)])
        assert rc == 0

    def test_tampered_trace_exits_1(self, tmp_path):
        scenario, _ = write_scenario(tmp_path)
        traces = tmp_path / "traces"
        main(["run", str(scenario), "--traces", str(traces), "--quiet"])
        trace_path = traces / "mallory-hop0.trace"
        data = bytearray(trace_path.read_bytes())
        data[-1] ^= 0x01
        trace_path.write_bytes(bytes(data))
        rc = main(["verify",
                   "--trace", str(trace_path),
                   "--fingerprint", str(traces / "mallory-hop0.fp"),
                   "--program", str(traces / "mallory.bin"),
                   "--initial-state", str(traces / "mallory-hop0.state"),
                   "--scenario", str(scenario)])
        assert rc == 1

    def test_final_digest_check(self, tmp_path):
        scenario, _ = write_scenario(tmp_path)
        traces = tmp_path / "traces"
        main(["run", str(scenario), "--traces", str(traces), "--quiet"])
        wrong = state_digest(AgentState()).hex()
        rc = main(["verify",
                   "--trace", str(traces / "bystander-hop0.trace"),
                   "--fingerprint", str(traces / "bystander-hop0.fp"),
                   "--program", str(traces / "bystander.bin"),
                   "--initial-state", str(traces / "bystander-hop0.state"),
                   "--final-digest", wrong,
                   "--scenario", str(scenario)])
        assert rc == 1

    def test_package_verification(self, tmp_path, capsys):
        # build a real in-flight package by stopping a two-hop run mid-flight
        from masim import Simulation
        frag = make_attack(AttackKind.ALTERATION)
        frag.scenario.platforms[0].malicious = "none"
        frag.scenario.platforms[0].alter = None
        sim = Simulation(frag.scenario)
        sim.run()
        record = sim.hop_store[(__import__("masim").principal_id("courier"), 0)]
        # reconstruct the packaged bytes via a fresh single-hop run
        sim2 = Simulation(frag.scenario)
        sim2._admit_fresh(0)
        platform = sim2.platforms[0]
        agent = platform.residents[0]
        departure = None
        tick = 0
        while departure is None:
            departure = platform.run_slice(tick, agent, sim2.ctx)
            tick += 1
        pkg, _ = departure
        path = tmp_path / "package.bin"
        path.write_bytes(pkg.encode())
        scenario_path = tmp_path / "scenario.yaml"
        frag.scenario.save(scenario_path)
        assert main(["verify", "--package", str(path),
                     "--scenario", str(scenario_path)]) == 0
        assert "VERIFIED" in capsys.readouterr().out
        corrupted = bytearray(pkg.encode())
        corrupted[0] ^= 1
        path.write_bytes(bytes(corrupted))
        assert main(["verify", "--package", str(path),
                     "--scenario", str(scenario_path)]) == 1

    def test_incomplete_flags_exit_2(self, tmp_path):
        assert main(["verify", "--trace", str(tmp_path / "x")]) == 2


class TestReport:
    def test_report_from_events_file(self, tmp_path, capsys):
        scenario, _ = write_scenario(tmp_path, kind=AttackKind.DOS_FLOOD)
        events = tmp_path / "events.jsonl"
        main(["run", str(scenario), "--events", str(events), "--quiet"])
        out = tmp_path / "report.yaml"
        assert main(["report", str(events), "--out", str(out)]) == 0
        doc = yaml.safe_load(out.read_text())
        assert doc["requests_denied"]["PATTERN_MATCH"] >= 7
        assert "trace storage" in capsys.readouterr().out

    def test_report_matches_run_report(self, tmp_path):
        scenario, _ = write_scenario(tmp_path, kind=AttackKind.UNAUTH_ACCESS)
        events = tmp_path / "events.jsonl"
        run_report = tmp_path / "run-report.yaml"
        main(["run", str(scenario), "--events", str(events),
              "--report", str(run_report), "--quiet"])
        offline = tmp_path / "offline.yaml"
        main(["report", str(events), "--out", str(offline)])
        assert yaml.safe_load(run_report.read_text()) == \
            yaml.safe_load(offline.read_text())

    def test_missing_events_exit_2(self, tmp_path):
        assert main(["report", str(tmp_path / "none.jsonl")]) == 2

    def test_report_reads_saved_pattern_log(self, tmp_path, capsys):
        scenario, _ = write_scenario(tmp_path)
        events = tmp_path / "events.jsonl"
        saved = tmp_path / "patterns.bin"
        main(["run", str(scenario), "--events", str(events),
              "--pattern-log", str(saved), "--quiet"])
        assert main(["report", str(events), "--pattern-log", str(saved)]) == 0
        out = capsys.readouterr().out
        assert "log-file" in out and "0805" in out
