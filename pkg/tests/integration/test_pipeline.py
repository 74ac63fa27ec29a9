"""Integration tests: forge a corpus, triage it and score the results."""

import json
from dataclasses import replace

import pytest

from apk_triage.agents import AgentSuite
from apk_triage.cli import EXIT_CLEAN, main
from apk_triage.evaluation import load_corpus
from apk_triage.models import FraudCategory
from apk_triage.orchestrator import SMS_PRIORITY_RULE, analyze_path

NOW = "2026-01-01T00:00:00Z"


@pytest.fixture
def suite(lexicon, reference_icons, fixed_now):
    return AgentSuite(lexicon=lexicon, reference_icons=reference_icons, now=fixed_now)


def event_names(verdict, name):
    return [event for event in verdict.trace if event.event == name]


@pytest.mark.integration
class TestEvaluateCommand:
    """End-to-end evaluation of the default forged corpus."""

    def test_perfect_scores(self, forged_corpus, tmp_path, capsys, working_directory):
        """Test that planted indicators are found in every held-out sample."""
        working_directory(tmp_path)
        report = tmp_path / "report.json"

        code = main(["evaluate", str(forged_corpus), "--report", str(report), "--now", NOW])

        assert code == EXIT_CLEAN
        rows = [line for line in capsys.readouterr().out.splitlines() if line.startswith("apk-triage")]
        assert len(rows) == 2
        for row in rows:
            assert row.split()[-4:] == ["100.00"] * 4

        payload = json.loads(report.read_text(encoding="utf-8"))
        assert payload["failures"] == 0
        assert payload["summary"]["samples"] == 8
        assert payload["summary"]["seed"] == 7

    def test_repeats_average(self, forged_corpus, tmp_path, capsys, working_directory):
        """Test that repeated evaluation reports each seed and the mean."""
        working_directory(tmp_path)
        report = tmp_path / "report.json"

        code = main(
            ["evaluate", str(forged_corpus), "--repeats", "2", "--report", str(report), "--now", NOW]
        )

        assert code == EXIT_CLEAN
        payload = json.loads(report.read_text(encoding="utf-8"))
        assert payload["seeds"] == [7, 8]
        assert payload["mean"]["binary"]["accuracy"] == 1.0


@pytest.mark.integration
class TestCorpusVerdicts:
    """Per-sample behaviour on forged APKs."""

    def test_every_sample_classified(self, forged_corpus, suite):
        """Test each sample's category with the whole corpus as context."""
        for entry in load_corpus(forged_corpus):
            verdict = analyze_path(entry.apk_path, suite)

            assert verdict.category is entry.label, entry.id

    def test_sms_rule_fires_for_fraud(self, forged_corpus, suite):
        """Test that SMS and contacts access elevates content analysis."""
        entry = next(e for e in load_corpus(forged_corpus) if e.label is FraudCategory.SCAM)

        verdict = analyze_path(entry.apk_path, suite)

        rules = event_names(verdict, "rule")
        assert rules and rules[0].detail["rule"] == SMS_PRIORITY_RULE

    def test_absent_modalities_skipped(self, planted, forge_apk, suite):
        """Test that an unsigned, iconless APK skips those analyses and still decides."""
        spec = replace(planted(FraudCategory.GAMBLING), certificate=None, icon=None)

        verdict = analyze_path(forge_apk(spec), suite)

        skips = {event.detail["kind"]: event.detail["reason"] for event in event_names(verdict, "skip")}
        assert skips == {"IconAnalysis": "no icon", "CertificateCheck": "no certificate"}
        assigned = {
            task["kind"] for event in event_names(verdict, "assign") for task in event.detail["tasks"]
        }
        assert not assigned & set(skips)
        assert verdict.category is FraudCategory.GAMBLING

    def test_cli_exit_codes(self, planted, forge_apk, working_directory, tmp_path):
        """Test the analyze exit codes for both verdicts."""
        working_directory(tmp_path)
        fraud = forge_apk(planted(FraudCategory.SEXUAL_CONTENT), "fraud.apk")
        clean = forge_apk(planted(FraudCategory.LEGITIMATE), "clean.apk")

        assert main(["analyze", str(fraud), "--now", NOW]) == 2
        assert main(["analyze", str(clean), "--now", NOW]) == 0

    def test_link_analysis_with_corpus(self, forged_corpus, planted, forge_apk, working_directory, tmp_path, capsys):
        """Test that a new family member is linked to the labeled corpus."""
        working_directory(tmp_path)
        path = forge_apk(planted(FraudCategory.GAMBLING, index=42), "new.apk")

        code = main(["analyze", str(path), "--corpus", str(forged_corpus), "--now", NOW])

        assert code == 2
        verdict = json.loads(capsys.readouterr().out)
        findings = [e for e in verdict["trace"] if e["event"] == "finding"]
        link = next(e for e in findings if e["detail"]["kind"] == "LinkAnalysis")
        assert link["detail"]["finding"]["risk_score"] == 1.0
