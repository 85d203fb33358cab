from collections import Counter

import pytest

from masim import run_scenario
from masim.patterns import MalformedLog
from masim.report import COUNTERMEASURES, generate_report, reconstruct_logs, render_table
from masim.threats import AttackKind, make_attack


class TestEmpty:
    def test_empty_run_all_zero(self):
        report = generate_report([])
        assert report.incidents_total == 0
        assert report.requests_allowed == 0
        assert report.trace_bytes == 0
        assert report.pattern_record_count == 0
        assert report.captures_total == 0

    def test_malformed_row_raises_with_index(self):
        with pytest.raises(MalformedLog) as exc:
            generate_report([{"type": "STEP_SLICE", "tick": 0}])
        assert "row 0" in str(exc.value)
        with pytest.raises(MalformedLog):
            generate_report([{"not": "a row"}])


class TestFlood:
    def test_denied_by_pattern_at_least_length_minus_one(self):
        length = 8
        frag = make_attack(AttackKind.DOS_FLOOD, length=length)
        log, _ = run_scenario(frag.scenario)
        report = generate_report(log.rows)
        assert report.requests_denied.get("PATTERN_MATCH", 0) >= length - 1


class TestReconciliation:
    @pytest.mark.parametrize("kind", list(AttackKind), ids=[k.value for k in AttackKind])
    def test_counts_match_independent_recount(self, kind):
        log, _ = run_scenario(make_attack(kind).scenario)
        report = generate_report(log.rows)
        # straight per-row recount, independent of the report code paths
        types = Counter(r["type"] for r in log.rows)
        assert report.incidents_total == types["INCIDENT"]
        assert report.requests_allowed == types["REQUEST_ALLOWED"]
        assert report.denied_total == types["REQUEST_DENIED"]
        assert sum(report.disputes.values()) == types["DISPUTE"]
        assert report.trace_hops == (types["HALT"] + types["QUOTA_KILL"]
                                     + types["MIGRATE_OUT"])
        assert report.trace_entries == sum(r["steps"] for r in log.rows
                                           if r["type"] == "STEP_SLICE")
        assert report.trace_bytes == 48 * report.trace_hops + 14 * report.trace_entries
        assert report.captures_total == sum(1 for r in log.rows
                                            if r["type"] == "REQUEST_ALLOWED"
                                            and r["captured"])
        denied = Counter(r["reason"] for r in log.rows
                         if r["type"] == "REQUEST_DENIED")
        assert report.requests_denied == dict(denied)
        incidents = Counter((r["threat"], r["countermeasure"]) for r in log.rows
                            if r["type"] == "INCIDENT")
        flattened = {(t, cm): n for t, by in report.incidents.items()
                     for cm, n in by.items()}
        assert flattened == dict(incidents)

    @pytest.mark.parametrize("kind", list(AttackKind), ids=[k.value for k in AttackKind])
    def test_reconstructed_logs_match_resident_state(self, kind):
        log, sim = run_scenario(make_attack(kind).scenario)
        rebuilt = reconstruct_logs(log.rows)
        for platform in sim.platforms:
            name = sim.names[platform.platform_id]
            got = rebuilt.get(name)
            if got is None:
                assert not platform.log.records and not platform.log.blocklist
            else:
                assert got.serialize() == platform.log.serialize(), kind.value

    def test_report_steps_match_agents(self):
        frag = make_attack(AttackKind.DOS_LOOP, quota=50)
        log, _ = run_scenario(frag.scenario)
        report = generate_report(log.rows)
        assert report.agent_steps["mallory"] == 50


class TestRendering:
    def test_table_names_every_countermeasure(self):
        frag = make_attack(AttackKind.UNAUTH_ACCESS)
        log, _ = run_scenario(frag.scenario)
        table = render_table(generate_report(log.rows))
        for name, classification in COUNTERMEASURES.items():
            assert name in table
        assert "DETECTION" in table and "PREVENTION" in table

    def test_to_dict_is_yaml_serializable(self):
        import yaml
        frag = make_attack(AttackKind.EAVESDROP)
        log, _ = run_scenario(frag.scenario)
        dumped = yaml.safe_dump(generate_report(log.rows).to_dict())
        assert "captures_sealed" in dumped
