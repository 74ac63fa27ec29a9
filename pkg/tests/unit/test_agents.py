"""Unit tests for the agent roles and rule-mode decisions."""

from datetime import datetime, timezone

import pytest

from apk_triage.agents import (
    DEFAULT_WEIGHTS,
    AgentSuite,
    aggregate_findings,
    dominant_category,
    hamming_distance,
    noisy_or,
    requests_sms_or_contacts,
    run_certificate_checker,
    run_content_analyst,
    run_icon_analyst,
    run_link_analyst,
    run_package_tracer,
    run_permission_analyst,
)
from apk_triage.errors import AgentContractError, AgentFailure, ScriptMiss
from apk_triage.linking import CorpusIndex
from apk_triage.llm import Gateway, ScriptedBackend
from apk_triage.models import AgentFinding, AgentId, FraudCategory, TaskKind
from apk_triage.tables import ReferenceIconSet

ROULETTE = 0x3C7EFFFFFF7E3C00


@pytest.fixture
def suite(lexicon, reference_icons, fixed_now):
    return AgentSuite(lexicon=lexicon, reference_icons=reference_icons, now=fixed_now)


def finding(agent, risk, hint=None):
    return AgentFinding(agent_id=agent, risk_score=risk, category_hint=hint)


class TestTools:
    """Tests for the deterministic helper tools."""

    def test_noisy_or(self):
        """Test independent evidence combination."""
        assert noisy_or([0.5, 0.5]) == pytest.approx(0.75)
        assert noisy_or([]) == 0.0

    def test_noisy_or_order_independent(self):
        """Test that permuting the weights gives the same result."""
        assert noisy_or([0.1, 0.7, 0.3]) == noisy_or([0.3, 0.1, 0.7])

    def test_hamming_distance(self):
        """Test bit distance between hashes."""
        assert hamming_distance(0b1011, 0b0001) == 2
        assert hamming_distance(ROULETTE, ROULETTE) == 0

    def test_requests_sms_or_contacts(self):
        """Test the sensitive permission filter."""
        permissions = ["android.permission.INTERNET", "android.permission.READ_CONTACTS"]

        assert requests_sms_or_contacts(permissions) == ["android.permission.READ_CONTACTS"]

    def test_dominant_category_tie_break(self):
        """Test that ties go to the earlier declared category."""
        scores = {FraudCategory.SCAM: 0.5, FraudCategory.GAMBLING: 0.5}

        assert dominant_category(scores) is FraudCategory.GAMBLING
        assert dominant_category({}) is None


class TestPackageTracer:
    """Tests for the Package Tracer."""

    def test_plain_package(self, make_bundle, lexicon):
        """Test the baseline risk of an unremarkable package."""
        result = run_package_tracer(make_bundle(), lexicon)

        assert result.risk_score == 0.1
        assert result.category_hint is None
        assert ("package", "com.example.app") in result.evidence

    def test_lure_words(self, make_bundle, lexicon):
        """Test that lexicon terms in the name flag the package."""
        result = run_package_tracer(
            make_bundle(package_name="com.luckycasino.app", app_label="Lucky Casino"), lexicon
        )

        assert result.risk_score == 0.6
        assert result.category_hint is FraudCategory.GAMBLING

    def test_prefix_collision_requests_links(self, make_bundle, lexicon):
        """Test that a shared prefix asks for link analysis."""
        index = CorpusIndex.from_bundles(
            [("a", FraudCategory.SCAM, make_bundle(package_name="com.acme.one", sha256="1" * 64))]
        )

        result = run_package_tracer(make_bundle(package_name="com.acme.two"), lexicon, index)

        assert result.needs == (TaskKind.LINK_ANALYSIS,)


class TestIconAnalyst:
    """Tests for the Icon Analyst."""

    def test_exact_reference_match(self, make_bundle, reference_icons):
        """Test that a reference icon scores full risk."""
        result = run_icon_analyst(make_bundle(icon_hash=ROULETTE), reference_icons)

        assert result.risk_score == 1.0
        assert result.category_hint is FraudCategory.GAMBLING

    def test_near_match(self, make_bundle, reference_icons):
        """Test the linear distance decay."""
        result = run_icon_analyst(make_bundle(icon_hash=ROULETTE ^ 1), reference_icons)

        assert result.risk_score == pytest.approx(15 / 16)

    def test_distant_icon(self, make_bundle, reference_icons):
        """Test that a far icon gives no risk and no hint."""
        result = run_icon_analyst(make_bundle(icon_hash=0xF0F0F0F0F0F0F0F0), reference_icons)

        assert result.risk_score == 0.0
        assert result.category_hint is None

    def test_no_icon_abstains(self, make_bundle, reference_icons):
        """Test abstention without an icon."""
        result = run_icon_analyst(make_bundle(), reference_icons)

        assert result.abstained
        assert result.abstention_reason == "no icon"

    def test_no_references_abstains(self, make_bundle):
        """Test abstention with an empty reference set."""
        result = run_icon_analyst(make_bundle(icon_hash=ROULETTE), ReferenceIconSet(()))

        assert result.abstained


class TestPermissionAnalyst:
    """Tests for the Permission Analyst."""

    def test_dangerous_permissions(self, make_bundle, lexicon):
        """Test the noisy-or of dangerous permission weights."""
        bundle = make_bundle(
            permissions=("android.permission.SEND_SMS", "android.permission.READ_CONTACTS")
        )

        result = run_permission_analyst(bundle, lexicon)

        assert result.risk_score == pytest.approx(0.7)
        assert result.needs == (TaskKind.CONTENT_ANALYSIS,)

    def test_harmless_permissions(self, make_bundle, lexicon):
        """Test that unlisted permissions carry no risk."""
        result = run_permission_analyst(
            make_bundle(permissions=("android.permission.INTERNET",)), lexicon
        )

        assert result.risk_score == 0.0
        assert result.needs == ()


class TestContentAnalyst:
    """Tests for the Content Analyst."""

    def test_term_in_dex_strings(self, make_bundle, lexicon):
        """Test that lure text in code strings is found and located."""
        result = run_content_analyst(make_bundle(strings=("Play CASINO now",)), lexicon)

        assert result.risk_score == pytest.approx(0.6)
        assert result.category_hint is FraudCategory.GAMBLING
        assert result.evidence == (("term", "'casino' (gambling) in dex[0]"),)

    def test_dominant_category(self, make_bundle, lexicon):
        """Test the category with the greatest summed weight wins."""
        bundle = make_bundle(
            strings=("claim your prize", "guaranteed profit by wire transfer", "lucky")
        )

        assert run_content_analyst(bundle, lexicon).category_hint is FraudCategory.SCAM

    def test_clean_text(self, make_bundle, lexicon):
        """Test that clean text scores zero."""
        result = run_content_analyst(make_bundle(strings=("Sync complete",)), lexicon)

        assert result.risk_score == 0.0
        assert result.category_hint is None


class TestCertificateChecker:
    """Tests for the Certificate Checker."""

    def test_clean_certificate(self, make_bundle, make_certificate, fixed_now):
        """Test that a valid CA-issued certificate raises no flags."""
        result = run_certificate_checker(make_bundle(certificate=make_certificate()), fixed_now)

        assert result.risk_score == 0.0
        assert result.evidence == (("certificate", "no flags for CN=Example Apps"),)

    def test_expired_self_signed_placeholder(self, make_bundle, make_certificate, fixed_now):
        """Test that independent flags combine by noisy-or."""
        certificate = make_certificate(
            subject_cn="Android",
            issuer_cn="Android",
            not_before=datetime(2010, 1, 1, tzinfo=timezone.utc),
            not_after=datetime(2011, 1, 1, tzinfo=timezone.utc),
        )

        result = run_certificate_checker(make_bundle(certificate=certificate), fixed_now)

        assert result.risk_score == pytest.approx(0.79)
        assert [kind for kind, _ in result.evidence] == [
            "expired",
            "self_signed",
            "placeholder_subject",
        ]

    def test_long_validity(self, make_bundle, make_certificate, fixed_now):
        """Test the long validity flag."""
        certificate = make_certificate(not_after=datetime(2120, 1, 1, tzinfo=timezone.utc))

        result = run_certificate_checker(make_bundle(certificate=certificate), fixed_now)

        assert result.risk_score == pytest.approx(0.2)

    def test_missing_certificate_is_contract_error(self, make_bundle, fixed_now):
        """Test that the checker must not be assigned without a certificate."""
        with pytest.raises(AgentContractError):
            run_certificate_checker(make_bundle(), fixed_now)


class TestLinkAnalyst:
    """Tests for the Link Analyst."""

    def test_no_corpus(self, make_bundle):
        """Test zero risk without corpus context."""
        result = run_link_analyst(make_bundle(), None)

        assert result.risk_score == 0.0
        assert result.evidence == (("corpus", "no corpus context"),)

    def test_fraction_of_fraudulent_links(self, make_bundle, make_certificate):
        """Test the fraud fraction among apps sharing a certificate."""
        certificate = make_certificate(fingerprint="ee" * 32)
        index = CorpusIndex.from_bundles(
            [
                ("g", FraudCategory.GAMBLING, make_bundle(certificate=certificate, sha256="1" * 64)),
                ("l", FraudCategory.LEGITIMATE, make_bundle(certificate=certificate, sha256="2" * 64)),
            ]
        )

        result = run_link_analyst(make_bundle(package_name="org.x.y", certificate=certificate), index)

        assert result.risk_score == pytest.approx(0.5)
        assert result.category_hint is FraudCategory.GAMBLING


class TestAggregateFindings:
    """Tests for aggregate_findings."""

    def test_weighted_mean_and_vote(self):
        """Test the probability and category of fraudulent findings."""
        findings = {
            AgentId.CONTENT_ANALYST: finding(AgentId.CONTENT_ANALYST, 0.8, FraudCategory.GAMBLING),
            AgentId.PERMISSION_ANALYST: finding(AgentId.PERMISSION_ANALYST, 0.6),
            AgentId.ICON_ANALYST: AgentFinding.abstention(AgentId.ICON_ANALYST, "no icon"),
        }

        probability, category, rationale = aggregate_findings(findings, DEFAULT_WEIGHTS)

        assert probability == pytest.approx((0.25 * 0.8 + 0.20 * 0.6) / 0.45)
        assert category is FraudCategory.GAMBLING
        assert "icon_analyst: abstained (no icon)" in rationale

    def test_below_threshold_is_legitimate(self):
        """Test that low risk yields the legitimate category."""
        findings = {
            AgentId.CONTENT_ANALYST: finding(AgentId.CONTENT_ANALYST, 0.2, FraudCategory.SCAM)
        }

        _, category, _ = aggregate_findings(findings, DEFAULT_WEIGHTS)

        assert category is FraudCategory.LEGITIMATE

    def test_fraud_without_hint(self):
        """Test the other_fraud fallback."""
        findings = {AgentId.PERMISSION_ANALYST: finding(AgentId.PERMISSION_ANALYST, 0.9)}

        _, category, _ = aggregate_findings(findings, DEFAULT_WEIGHTS)

        assert category is FraudCategory.OTHER_FRAUD

    def test_insertion_order_irrelevant(self):
        """Test that the result does not depend on arrival order."""
        a = finding(AgentId.CONTENT_ANALYST, 0.7, FraudCategory.SCAM)
        b = finding(AgentId.ICON_ANALYST, 0.7, FraudCategory.GAMBLING)

        forward = aggregate_findings({a.agent_id: a, b.agent_id: b}, DEFAULT_WEIGHTS)
        backward = aggregate_findings({b.agent_id: b, a.agent_id: a}, DEFAULT_WEIGHTS)

        assert forward == backward


class TestDecide:
    """Tests for AgentSuite.decide."""

    def test_every_agent_abstained(self, suite):
        """Test the low-confidence legitimate verdict."""
        findings = {AgentId.ICON_ANALYST: AgentFinding.abstention(AgentId.ICON_ANALYST, "timeout")}

        verdict = suite.decide(findings)

        assert verdict.fraud_probability is None
        assert verdict.category is FraudCategory.LEGITIMATE
        assert verdict.low_confidence

    def test_llm_decision(self, suite):
        """Test that a usable Decision Maker reply decides."""
        gateway = Gateway(
            ScriptedBackend(
                {"decision_maker:*": '{"risk_score": 0.9, "category_hint": "scam", "evidence": []}'}
            ),
            "system",
        )
        findings = {AgentId.CONTENT_ANALYST: finding(AgentId.CONTENT_ANALYST, 0.1)}

        verdict = suite.decide(findings, gateway)

        assert verdict.decided_by == "llm"
        assert verdict.fraud_probability == 0.9
        assert verdict.category is FraudCategory.SCAM

    def test_llm_failure_falls_back_to_rules(self, suite):
        """Test the rule fallback when the Decision Maker fails."""
        gateway = Gateway(ScriptedBackend({}), "system")
        findings = {AgentId.CONTENT_ANALYST: finding(AgentId.CONTENT_ANALYST, 0.9)}

        verdict = suite.decide(findings, gateway)

        assert verdict.decided_by == "rule_fallback"
        assert verdict.fraud_probability == pytest.approx(0.9)
        assert verdict.rationale[0] == "decision maker unavailable, rule aggregation used"


class TestRunWithGateway:
    """Tests for AgentSuite.run in LLM mode."""

    def test_model_reply_is_the_finding(self, suite, make_bundle):
        """Test that the parsed reply replaces the tool finding."""
        gateway = Gateway(
            ScriptedBackend({"content_analyst:*": '{"risk_score": 0.33}'}), "system"
        )

        result = suite.run(TaskKind.CONTENT_ANALYSIS, make_bundle(), gateway)

        assert result.risk_score == 0.33

    def test_tool_abstention_skips_model(self, suite, make_bundle):
        """Test that an abstaining tool is not sent to the model."""
        gateway = Gateway(ScriptedBackend({}), "system")

        result = suite.run(TaskKind.ICON_ANALYSIS, make_bundle(), gateway)

        assert result.abstention_reason == "no icon"

    def test_backend_failure_raises_agent_failure(self, suite, make_bundle):
        """Test that a backend error is reported as the agent's failure."""
        gateway = Gateway(ScriptedBackend({}), "system")

        with pytest.raises(AgentFailure, match="ScriptMiss") as excinfo:
            suite.run(TaskKind.CONTENT_ANALYSIS, make_bundle(), gateway)

        assert excinfo.value.agent == AgentId.CONTENT_ANALYST.value
        assert isinstance(excinfo.value.__cause__, ScriptMiss)
