"""Unit tests for the Task Master's allocation loop."""

import json
import random

import httpx
import pytest

from apk_triage.agents import AgentSuite
from apk_triage.errors import PipelineError
from apk_triage.llm import Gateway, LiveBackend, ScriptedBackend
from apk_triage.models import AgentFinding, AgentId, FraudCategory, TaskKind
from apk_triage.orchestrator import (
    SMS_PRIORITY_RULE,
    PipelinePolicy,
    SharedState,
    TaskPriority,
    initial_tasks,
    run_pipeline,
    replay_decision,
)

SCENARIOS = 1000
SMS = "android.permission.SEND_SMS"
ROULETTE = 0x3C7EFFFFFF7E3C00


@pytest.fixture
def suite(lexicon, reference_icons, fixed_now):
    return AgentSuite(lexicon=lexicon, reference_icons=reference_icons, now=fixed_now)


def events(verdict, name):
    return [event for event in verdict.trace if event.event == name]


def assigned_kinds(verdict):
    return [task["kind"] for event in events(verdict, "assign") for task in event.detail["tasks"]]


class TestInitialTasks:
    """Tests for initial_tasks."""

    def test_all_modalities(self, make_bundle, make_certificate):
        """Test that icon and certificate add their tasks."""
        bundle = make_bundle(icon_hash=ROULETTE, certificate=make_certificate())

        kinds = [task.kind for task in initial_tasks(bundle)]

        assert kinds == [
            TaskKind.PACKAGE_TRACE,
            TaskKind.ICON_ANALYSIS,
            TaskKind.PERMISSION_ANALYSIS,
            TaskKind.CERTIFICATE_CHECK,
        ]

    def test_absent_modalities_skipped(self, make_bundle):
        """Test skip reasons for missing icon and certificate."""
        skipped = []

        kinds = [task.kind for task in initial_tasks(make_bundle(), skipped)]

        assert kinds == [TaskKind.PACKAGE_TRACE, TaskKind.PERMISSION_ANALYSIS]
        assert skipped == [
            (TaskKind.ICON_ANALYSIS, "no icon"),
            (TaskKind.CERTIFICATE_CHECK, "no certificate"),
        ]


class TestSharedState:
    """Tests for SharedState.record."""

    def test_agent_recorded_once(self, make_bundle):
        """Test that a second finding for the same kind is rejected."""
        state = SharedState(bundle=make_bundle())
        finding = AgentFinding(agent_id=AgentId.PACKAGE_TRACER, risk_score=0.1)
        state.record(TaskKind.PACKAGE_TRACE, finding)

        with pytest.raises(PipelineError):
            state.record(TaskKind.PACKAGE_TRACE, finding)

    def test_wrong_agent_rejected(self, make_bundle):
        """Test that a finding must come from the kind's agent."""
        state = SharedState(bundle=make_bundle())

        with pytest.raises(PipelineError):
            state.record(
                TaskKind.PACKAGE_TRACE, AgentFinding(agent_id=AgentId.ICON_ANALYST, risk_score=0.1)
            )


class TestPipelinePolicy:
    """Tests for PipelinePolicy validation."""

    def test_iterations_at_least_one(self):
        """Test the iteration cap lower bound."""
        with pytest.raises(ValueError):
            PipelinePolicy(max_iterations=0)

    def test_unknown_mode(self):
        """Test that only rule and llm modes exist."""
        with pytest.raises(ValueError):
            PipelinePolicy(mode="hybrid")


class TestRunPipeline:
    """Tests for run_pipeline in rule mode."""

    def test_single_iteration_without_needs(self, suite, make_bundle):
        """Test that a bundle without follow-ups decides after one iteration."""
        verdict = run_pipeline(make_bundle(), suite)

        assert [event.event for event in verdict.trace] == [
            "skip",
            "skip",
            "assign",
            "finding",
            "finding",
            "decision",
        ]
        assert verdict.category is FraudCategory.LEGITIMATE

    def test_skipped_kinds_never_assigned(self, suite, make_bundle):
        """Test that absent modalities are not analysed."""
        verdict = run_pipeline(make_bundle(permissions=(SMS,)), suite)

        assert "IconAnalysis" not in assigned_kinds(verdict)
        assert "CertificateCheck" not in assigned_kinds(verdict)

    def test_sms_permission_elevates_content(self, suite, make_bundle):
        """Test the priority rule for SMS and contacts access."""
        verdict = run_pipeline(make_bundle(permissions=(SMS,)), suite)

        rules = events(verdict, "rule")
        assert [event.detail["rule"] for event in rules] == [SMS_PRIORITY_RULE]
        second = events(verdict, "assign")[1].detail["tasks"]
        assert second[0]["kind"] == "ContentAnalysis"
        assert second[0]["priority"] == TaskPriority.ELEVATED.value

    def test_forced_decision(self, suite, make_bundle):
        """Test that the iteration cap forces a decision with outstanding work."""
        verdict = run_pipeline(
            make_bundle(permissions=(SMS,)), suite, policy=PipelinePolicy(max_iterations=1)
        )

        forced = events(verdict, "forced")
        assert len(forced) == 1
        assert forced[0].detail["outstanding"] == ["ContentAnalysis"]
        assert verdict.trace[-1].event == "decision"

    def test_fraudulent_bundle(self, suite, make_bundle, make_certificate):
        """Test that a lure-laden bundle is flagged in its category."""
        bundle = make_bundle(
            package_name="com.luckycasino.slots",
            app_label="Lucky Casino",
            permissions=(SMS, "android.permission.READ_CONTACTS"),
            strings=("Jackpot! casino bonus", "poker night"),
            icon_hash=ROULETTE,
            certificate=make_certificate(subject_cn="Android", issuer_cn="Android"),
        )

        verdict = run_pipeline(bundle, suite)

        assert verdict.is_fraud
        assert verdict.category is FraudCategory.GAMBLING

    def test_replay_matches_verdict(self, suite, make_bundle):
        """Test that the trace alone reproduces the decision."""
        verdict = run_pipeline(make_bundle(permissions=(SMS,), strings=("claim your prize",)), suite)

        assert replay_decision(verdict.trace) == (verdict.fraud_probability, verdict.category)

    def test_trace_is_json_serializable(self, suite, make_bundle):
        """Test that the verdict serializes with its trace."""
        verdict = run_pipeline(make_bundle(permissions=(SMS,)), suite)

        assert json.loads(json.dumps(verdict.to_dict()))["trace"][-1]["event"] == "decision"

    def test_llm_mode_requires_gateway(self, suite, make_bundle):
        """Test that llm mode without a gateway is an error."""
        with pytest.raises(PipelineError):
            run_pipeline(make_bundle(), suite, policy=PipelinePolicy(mode="llm"))

    def test_timeouts_become_abstentions(self, suite, make_bundle):
        """Test that completion timeouts abstain instead of failing the run."""

        def handler(request):
            raise httpx.ReadTimeout("slow model")

        backend = LiveBackend(
            endpoint_url="https://llm.test",
            transport=httpx.MockTransport(handler),
            sleep=lambda seconds: None,
        )
        verdict = run_pipeline(
            make_bundle(), suite, Gateway(backend, "system"), PipelinePolicy(mode="llm")
        )

        reasons = {event.detail["finding"]["abstention_reason"] for event in events(verdict, "finding")}
        assert reasons == {"timeout"}
        assert verdict.fraud_probability is None
        assert verdict.low_confidence

    def test_agent_failures_become_abstentions(self, suite, make_bundle):
        """Test that a rejected credential makes every agent abstain."""
        backend = LiveBackend(
            endpoint_url="https://llm.test",
            transport=httpx.MockTransport(lambda request: httpx.Response(401)),
            sleep=lambda seconds: None,
        )
        verdict = run_pipeline(
            make_bundle(), suite, Gateway(backend, "system"), PipelinePolicy(mode="llm")
        )

        reasons = {event.detail["finding"]["abstention_reason"] for event in events(verdict, "finding")}
        assert reasons == {"failure: AuthError"}
        assert verdict.fraud_probability is None
        assert verdict.trace[-1].event == "decision"


def scripted_reply(rng):
    if rng.random() < 0.15:
        return "I cannot decide."
    needs = rng.sample([kind.value for kind in TaskKind], rng.randint(0, 3))
    if rng.random() < 0.1:
        needs.append("Telepathy")
    hint = rng.choice([None] + [category.value for category in FraudCategory])
    return json.dumps(
        {"risk_score": round(rng.random(), 3), "category_hint": hint, "needs": needs}
    )


class TestScriptedScenarios:
    """Orchestration invariants over seeded random LLM scripts."""

    def test_invariants(self, suite, make_bundle, make_certificate):
        """Test iteration cap, single execution, skips and decision placement."""
        rng = random.Random(2024)
        permissions = [SMS, "android.permission.READ_CONTACTS", "android.permission.INTERNET"]

        for _ in range(SCENARIOS):
            table = {f"{agent.value}:*": scripted_reply(rng) for agent in AgentId if rng.random() < 0.9}
            bundle = make_bundle(
                permissions=tuple(p for p in permissions if rng.random() < 0.4),
                icon_hash=rng.getrandbits(64) if rng.random() < 0.5 else None,
                certificate=make_certificate() if rng.random() < 0.5 else None,
            )
            max_iterations = rng.randint(1, 3)
            policy = PipelinePolicy(mode="llm", max_iterations=max_iterations)

            verdict = run_pipeline(bundle, suite, Gateway(ScriptedBackend(table), "system"), policy)

            assert len(events(verdict, "assign")) <= max_iterations
            kinds = [event.detail["kind"] for event in events(verdict, "finding")]
            assert len(kinds) == len(set(kinds))
            skipped = {event.detail["kind"] for event in events(verdict, "skip")}
            assert not skipped & set(assigned_kinds(verdict))
            assert [event.event for event in verdict.trace].count("decision") == 1
            assert verdict.trace[-1].event == "decision"
            iterations = [event.iteration for event in verdict.trace]
            assert iterations == sorted(iterations)
            if verdict.fraud_probability is not None:
                assert 0.0 <= verdict.fraud_probability <= 1.0
