"""The eight agent roles.

Each analytical agent runs deterministic tools over its slice of the feature
bundle. In rule mode the tool output is the finding; in LLM mode the tool
output becomes the prompt context and the model's parsed reply is the
finding. The Decision Maker aggregates findings into a verdict.
"""

import json
import logging
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Optional

from .bundle import ApkFeatureBundle
from .errors import AgentContractError, AgentFailure, CompletionTimeout, GatewayError
from .linking import CorpusIndex, LinkType
from .llm import Gateway, PromptTemplate
from .models import (
    AGENT_TASKS,
    AgentFinding,
    AgentId,
    AgentKind,
    Evidence,
    FraudCategory,
    TaskKind,
    Verdict,
)
from .tables import ReferenceIconSet, RiskLexicon
from .templates import ROLE_TEMPLATES
from .utils import DECISION_THRESHOLD

logger = logging.getLogger(__name__)

# ====================
# Rule constants
# ====================

DEFAULT_WEIGHTS: dict[TaskKind, float] = {
    TaskKind.CONTENT_ANALYSIS: 0.25,
    TaskKind.PERMISSION_ANALYSIS: 0.20,
    TaskKind.ICON_ANALYSIS: 0.15,
    TaskKind.CERTIFICATE_CHECK: 0.15,
    TaskKind.LINK_ANALYSIS: 0.15,
    TaskKind.PACKAGE_TRACE: 0.10,
}

# Aggregation order; fixed so that the decision does not depend on arrival order
ANALYTICAL_AGENTS = tuple(agent for agent in AgentId if agent.kind is AgentKind.ANALYTICAL)

PACKAGE_RISK_FLAGGED = 0.6
PACKAGE_RISK_BASELINE = 0.1

ICON_DISTANCE_SCALE = 16
ICON_HINT_MAX_DISTANCE = 10

EXPIRED_WEIGHT = 0.5
SELF_SIGNED_WEIGHT = 0.3
LONG_VALIDITY_WEIGHT = 0.2
PLACEHOLDER_WEIGHT = 0.4
LONG_VALIDITY_YEARS = 30
PLACEHOLDER_SUBJECTS = frozenset({"android", "test", "unknown", "debug", "android debug"})

SMS_CONTACT_PERMISSIONS = frozenset(
    {
        "android.permission.SEND_SMS",
        "android.permission.RECEIVE_SMS",
        "android.permission.READ_SMS",
        "android.permission.WRITE_SMS",
        "android.permission.RECEIVE_MMS",
        "android.permission.READ_CONTACTS",
        "android.permission.WRITE_CONTACTS",
    }
)

_REVERSE_DNS = re.compile(r"^[A-Za-z][A-Za-z0-9_]*(\.[A-Za-z][A-Za-z0-9_]*)+$")


# ====================
# Tools
# ====================


def noisy_or(weights: Iterable[float]) -> float:
    """Combine independent evidence weights as 1 - prod(1 - w).

    Weights are multiplied in sorted order so the result does not depend on
    the order they were matched in.
    """
    product = 1.0
    for weight in sorted(weights):
        product *= 1.0 - weight
    return min(1.0, max(0.0, 1.0 - product))


def hamming_distance(a: int, b: int) -> int:
    """Number of differing bits between two 64-bit hashes."""
    return bin(a ^ b).count("1")


def requests_sms_or_contacts(permissions: Iterable[str]) -> list[str]:
    """Return the SMS and contacts permissions among those requested."""
    return sorted(set(permissions) & SMS_CONTACT_PERMISSIONS)


def dominant_category(scores: Mapping[FraudCategory, float]) -> Optional[FraudCategory]:
    """Pick the category with the greatest score; ties go to the earlier category."""
    best: Optional[FraudCategory] = None
    for category in FraudCategory:
        score = scores.get(category, 0.0)
        if score <= 0.0:
            continue
        if best is None or score > scores[best]:
            best = category
    return best


def _term_scores(lexicon: RiskLexicon, terms: Iterable[str]) -> dict[FraudCategory, float]:
    scores: dict[FraudCategory, float] = {}
    for term in terms:
        entry = lexicon.terms[term]
        scores[entry.category] = scores.get(entry.category, 0.0) + entry.weight
    return scores


def _add_years(moment: datetime, years: int) -> datetime:
    try:
        return moment.replace(year=moment.year + years)
    except ValueError:
        return moment.replace(year=moment.year + years, day=28)


def _evidence(*items: tuple[str, str]) -> tuple[Evidence, ...]:
    return tuple((kind, detail) for kind, detail in items if kind and detail)


# ====================
# Roles
# ====================


@dataclass(frozen=True)
class AgentRole:
    """A registered agent: identity, prompt and the tools it may use."""

    id: AgentId
    kind: AgentKind
    template: PromptTemplate
    tools: tuple[str, ...] = ()


@dataclass
class AgentSuite:
    """All eight roles plus the read-only resources their tools consult.

    Args:
        lexicon: Term and permission weights
        reference_icons: Hashes of known fraudulent icons
        corpus_index: Labeled apps for link analysis, or None
        now: Clock used by certificate validity checks
        weights: Decision weight per task kind
        threshold: Fraud probability at or above which a verdict is fraudulent
    """

    lexicon: RiskLexicon
    reference_icons: ReferenceIconSet
    corpus_index: Optional[CorpusIndex] = None
    now: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    weights: Mapping[TaskKind, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    threshold: float = DECISION_THRESHOLD

    def __post_init__(self) -> None:
        if self.now.tzinfo is None:
            self.now = self.now.replace(tzinfo=timezone.utc)
        self.roles: dict[AgentId, AgentRole] = {
            agent: AgentRole(
                id=agent,
                kind=agent.kind,
                template=ROLE_TEMPLATES[agent],
                tools=ROLE_TEMPLATES[agent].allowed_tools,
            )
            for agent in AgentId
        }
        self._handlers: dict[TaskKind, Callable[[ApkFeatureBundle], tuple[AgentFinding, Any]]] = {
            TaskKind.PACKAGE_TRACE: self.trace_package,
            TaskKind.ICON_ANALYSIS: self.analyze_icon,
            TaskKind.PERMISSION_ANALYSIS: self.analyze_permissions,
            TaskKind.CONTENT_ANALYSIS: self.analyze_content,
            TaskKind.CERTIFICATE_CHECK: self.check_certificate,
            TaskKind.LINK_ANALYSIS: self.analyze_links,
        }

    # ---- dispatch ----

    def run(
        self, kind: TaskKind, bundle: ApkFeatureBundle, gateway: Optional[Gateway] = None
    ) -> AgentFinding:
        """Execute one task and return the agent's finding.

        Without a gateway the deterministic tool output is the finding. With
        one, the tool output is passed to the agent's prompt and the parsed
        reply is returned.

        Raises:
            AgentContractError: If the agent's required input is absent
            CompletionTimeout: If the LLM backend timed out
            AgentFailure: If the LLM backend failed otherwise
        """
        agent = kind.agent
        rule_finding, features = self._handlers[kind](bundle)
        if gateway is None or rule_finding.abstained:
            return rule_finding

        context = json.dumps(
            {"features": features, "tool_finding": rule_finding.to_dict()},
            sort_keys=True,
            ensure_ascii=False,
            default=str,
        )
        slots = {"package": bundle.manifest.package_name, "context": context}
        try:
            return gateway.consult(agent, self.roles[agent].template, slots)
        except CompletionTimeout:
            raise
        except GatewayError as e:
            raise AgentFailure(agent.value, f"{type(e).__name__}: {e}") from e

    # ---- analytical agents ----

    def trace_package(self, bundle: ApkFeatureBundle) -> tuple[AgentFinding, Any]:
        manifest = bundle.manifest
        terms = sorted(
            set(self.lexicon.match_terms(manifest.package_name))
            | set(self.lexicon.match_terms(manifest.app_label))
        )
        well_formed = bool(_REVERSE_DNS.match(manifest.package_name))
        collisions = (
            self.corpus_index.prefix_collisions(bundle) if self.corpus_index is not None else []
        )

        evidence = [
            ("package", manifest.package_name),
            ("label", manifest.app_label),
            ("version", f"{manifest.version_code} {manifest.version_name}".strip()),
            ("components", f"{len(manifest.activities)} activities, {len(manifest.services)} services"),
        ]
        evidence += [("lexicon_term", term) for term in terms]
        if not well_formed:
            evidence.append(("package_shape", "not a reverse-DNS name"))
        if collisions:
            evidence.append(("package_prefix", "shared with " + ", ".join(collisions)))

        flagged = bool(terms) or not well_formed
        finding = AgentFinding(
            agent_id=AgentId.PACKAGE_TRACER,
            risk_score=PACKAGE_RISK_FLAGGED if flagged else PACKAGE_RISK_BASELINE,
            category_hint=dominant_category(_term_scores(self.lexicon, terms)),
            evidence=_evidence(*evidence),
            needs=(TaskKind.LINK_ANALYSIS,) if collisions else (),
        )
        return finding, manifest.to_dict()

    def analyze_icon(self, bundle: ApkFeatureBundle) -> tuple[AgentFinding, Any]:
        icon = bundle.icon
        if icon is None:
            return AgentFinding.abstention(AgentId.ICON_ANALYST, "no icon"), None
        if not self.reference_icons.entries:
            return AgentFinding.abstention(AgentId.ICON_ANALYST, "no reference icons"), None

        distance, nearest = min(
            (hamming_distance(icon.ahash64, ref.ahash64), position)
            for position, ref in enumerate(self.reference_icons.entries)
        )
        reference = self.reference_icons.entries[nearest]
        features = {"ahash64": f"{icon.ahash64:016x}", "width": icon.width, "height": icon.height}
        finding = AgentFinding(
            agent_id=AgentId.ICON_ANALYST,
            risk_score=max(0.0, 1.0 - distance / ICON_DISTANCE_SCALE),
            category_hint=reference.category if distance <= ICON_HINT_MAX_DISTANCE else None,
            evidence=_evidence(
                ("ahash64", features["ahash64"]),
                (
                    "nearest_reference",
                    f"{reference.label or reference.category.value} "
                    f"({reference.category.value}) distance={distance}",
                ),
            ),
        )
        return finding, features

    def analyze_permissions(self, bundle: ApkFeatureBundle) -> tuple[AgentFinding, Any]:
        permissions = bundle.manifest.permissions
        matched = [p for p in permissions if p in self.lexicon.dangerous_permissions]
        sensitive = requests_sms_or_contacts(permissions)
        finding = AgentFinding(
            agent_id=AgentId.PERMISSION_ANALYST,
            risk_score=noisy_or(self.lexicon.dangerous_permissions[p] for p in matched),
            evidence=_evidence(
                *(
                    ("permission", f"{p} weight={self.lexicon.dangerous_permissions[p]:.2f}")
                    for p in matched
                )
            ),
            needs=(TaskKind.CONTENT_ANALYSIS,) if sensitive else (),
        )
        return finding, {"permissions": list(permissions)}

    def analyze_content(self, bundle: ApkFeatureBundle) -> tuple[AgentFinding, Any]:
        sources = [("label", bundle.manifest.app_label)]
        sources += [(f"url[{i}]", url) for i, url in enumerate(bundle.urls)]
        sources += [(f"dex[{i}]", text) for i, text in enumerate(bundle.dex_strings.strings)]

        locations: dict[str, str] = {}
        for location, text in sources:
            for term in self.lexicon.match_terms(text):
                locations.setdefault(term, location)

        terms = sorted(locations)
        finding = AgentFinding(
            agent_id=AgentId.CONTENT_ANALYST,
            risk_score=noisy_or(self.lexicon.terms[t].weight for t in terms),
            category_hint=dominant_category(_term_scores(self.lexicon, terms)),
            evidence=_evidence(
                *(
                    ("term", f"'{t}' ({self.lexicon.terms[t].category.value}) in {locations[t]}")
                    for t in terms
                )
            ),
        )
        features = {
            "label": bundle.manifest.app_label,
            "urls": list(bundle.urls),
            "string_count": len(bundle.dex_strings.strings),
            "matched_terms": terms,
        }
        return finding, features

    def check_certificate(self, bundle: ApkFeatureBundle) -> tuple[AgentFinding, Any]:
        certificate = bundle.certificate
        if certificate is None:
            raise AgentContractError("certificate checker called for a bundle without certificate")

        flags: list[tuple[str, float, str]] = []
        if not certificate.not_before <= self.now <= certificate.not_after:
            flags.append(("expired", EXPIRED_WEIGHT, f"not valid at {self.now.isoformat()}"))
        if certificate.self_signed:
            flags.append(("self_signed", SELF_SIGNED_WEIGHT, certificate.subject_dn or "empty subject"))
        if certificate.not_after > _add_years(certificate.not_before, LONG_VALIDITY_YEARS):
            span = f"{certificate.not_before.date()} to {certificate.not_after.date()}"
            flags.append(("long_validity", LONG_VALIDITY_WEIGHT, span))
        if certificate.subject_cn.strip().lower() in PLACEHOLDER_SUBJECTS:
            flags.append(("placeholder_subject", PLACEHOLDER_WEIGHT, f"CN={certificate.subject_cn}"))

        evidence = [(name, detail) for name, _, detail in flags]
        if not flags:
            evidence.append(("certificate", f"no flags for {certificate.subject_dn or 'empty subject'}"))
        finding = AgentFinding(
            agent_id=AgentId.CERTIFICATE_CHECKER,
            risk_score=noisy_or(weight for _, weight, _ in flags),
            evidence=_evidence(*evidence),
        )
        return finding, certificate.to_dict()

    def analyze_links(self, bundle: ApkFeatureBundle) -> tuple[AgentFinding, Any]:
        if self.corpus_index is None or len(self.corpus_index) == 0:
            finding = AgentFinding(
                agent_id=AgentId.LINK_ANALYST,
                risk_score=0.0,
                evidence=(("corpus", "no corpus context"),),
            )
            return finding, {"links": []}

        links = self.corpus_index.links(bundle)
        risk = 0.0
        for link_type in LinkType:
            linked = {link.app_id: link.label for link in links if link.link_type is link_type}
            if linked:
                fraudulent = sum(1 for label in linked.values() if label.is_fraud)
                risk = max(risk, fraudulent / len(linked))

        fraud_counts: dict[FraudCategory, float] = {}
        for link in links:
            if link.label.is_fraud:
                fraud_counts[link.label] = fraud_counts.get(link.label, 0.0) + 1.0

        evidence = [("link", link.describe()) for link in links] or [("link", "no shared artifacts")]
        finding = AgentFinding(
            agent_id=AgentId.LINK_ANALYST,
            risk_score=risk,
            category_hint=dominant_category(fraud_counts),
            evidence=_evidence(*evidence),
        )
        return finding, {"links": [link.describe() for link in links]}

    # ---- decision making ----

    def aggregate(
        self, findings: Mapping[AgentId, AgentFinding]
    ) -> tuple[Optional[float], FraudCategory, tuple[str, ...]]:
        """Weighted mean of non-abstaining risks and the risk-weighted category vote.

        Returns:
            Tuple of (probability or None when nothing contributed, category, rationale)
        """
        return aggregate_findings(findings, self.weights, self.threshold)

    def decide(
        self, findings: Mapping[AgentId, AgentFinding], gateway: Optional[Gateway] = None
    ) -> Verdict:
        """Produce the verdict for a completed analysis.

        In LLM mode the Decision Maker's reply supplies the probability and
        category; when it cannot be used, the rule aggregation stands in and
        the rationale says so.
        """
        probability, category, rationale = self.aggregate(findings)
        if probability is None:
            return Verdict(
                fraud_probability=None,
                category=FraudCategory.LEGITIMATE,
                rationale=("no findings: every agent abstained",),
                low_confidence=True,
            )
        if gateway is None:
            return Verdict(fraud_probability=probability, category=category, rationale=rationale)

        context = json.dumps(
            {agent.value: finding.to_dict() for agent, finding in sorted(findings.items())},
            sort_keys=True,
            ensure_ascii=False,
        )
        slots = {"package": _package_from(findings), "context": context}
        try:
            answer = gateway.consult(
                AgentId.DECISION_MAKER, self.roles[AgentId.DECISION_MAKER].template, slots
            )
        except GatewayError as e:
            logger.warning("decision maker failed (%s), using rule aggregation", type(e).__name__)
            answer = None

        if answer is None or answer.abstained or answer.risk_score is None:
            return Verdict(
                fraud_probability=probability,
                category=category,
                rationale=("decision maker unavailable, rule aggregation used",) + rationale,
                decided_by="rule_fallback",
            )

        llm_probability = answer.risk_score
        if llm_probability < self.threshold:
            llm_category = FraudCategory.LEGITIMATE
        elif answer.category_hint is not None and answer.category_hint.is_fraud:
            llm_category = answer.category_hint
        else:
            llm_category = category if category.is_fraud else FraudCategory.OTHER_FRAUD
        notes = tuple(f"decision_maker/{kind}: {detail}" for kind, detail in answer.evidence)
        return Verdict(
            fraud_probability=llm_probability,
            category=llm_category,
            rationale=notes + rationale,
            decided_by="llm",
        )


def _package_from(findings: Mapping[AgentId, AgentFinding]) -> str:
    tracer = findings.get(AgentId.PACKAGE_TRACER)
    if tracer is not None:
        for kind, detail in tracer.evidence:
            if kind == "package":
                return detail
    return "the app"


def aggregate_findings(
    findings: Mapping[AgentId, AgentFinding],
    weights: Mapping[TaskKind, float],
    threshold: float = DECISION_THRESHOLD,
) -> tuple[Optional[float], FraudCategory, tuple[str, ...]]:
    """Rule-mode decision over a set of findings.

    The probability is the weighted mean of non-abstaining risk scores. At or
    above the threshold the category is the risk-weighted majority of the
    agents' category hints (other_fraud when no agent named one).

    Args:
        findings: Findings keyed by agent
        weights: Weight per task kind
        threshold: Decision threshold

    Returns:
        Tuple of (probability or None, category, rationale lines)
    """
    numerator = 0.0
    denominator = 0.0
    votes: dict[FraudCategory, float] = {}
    rationale: list[str] = []
    for agent in ANALYTICAL_AGENTS:
        finding = findings.get(agent)
        if finding is None:
            continue
        if finding.risk_score is None:
            rationale.append(f"{agent.value}: abstained ({finding.abstention_reason})")
            continue
        weight = weights.get(AGENT_TASKS[agent], 0.0)
        if weight <= 0.0:
            continue
        numerator += weight * finding.risk_score
        denominator += weight
        if finding.category_hint is not None and finding.category_hint.is_fraud:
            votes[finding.category_hint] = votes.get(finding.category_hint, 0.0) + finding.risk_score
        hint = f" hint={finding.category_hint.value}" if finding.category_hint else ""
        rationale.append(f"{agent.value}: risk={finding.risk_score:.3f}{hint}")
        rationale.extend(f"{agent.value}/{kind}: {detail}" for kind, detail in finding.evidence)

    if denominator == 0.0:
        return None, FraudCategory.LEGITIMATE, tuple(rationale)

    probability = min(1.0, max(0.0, numerator / denominator))
    if probability < threshold:
        category = FraudCategory.LEGITIMATE
    else:
        category = dominant_category(votes) or FraudCategory.OTHER_FRAUD
    return probability, category, tuple(rationale)


# ====================
# Single-agent entry points
# ====================


def _single(
    lexicon: Optional[RiskLexicon] = None,
    reference_icons: Optional[ReferenceIconSet] = None,
    corpus_index: Optional[CorpusIndex] = None,
    now: Optional[datetime] = None,
) -> AgentSuite:
    return AgentSuite(
        lexicon=lexicon if lexicon is not None else RiskLexicon(terms={}, dangerous_permissions={}),
        reference_icons=reference_icons if reference_icons is not None else ReferenceIconSet(()),
        corpus_index=corpus_index,
        now=now if now is not None else datetime.now(timezone.utc),
    )


def run_package_tracer(
    bundle: ApkFeatureBundle,
    lexicon: RiskLexicon,
    corpus_index: Optional[CorpusIndex] = None,
    gateway: Optional[Gateway] = None,
) -> AgentFinding:
    return _single(lexicon=lexicon, corpus_index=corpus_index).run(
        TaskKind.PACKAGE_TRACE, bundle, gateway
    )


def run_icon_analyst(
    bundle: ApkFeatureBundle, reference_icons: ReferenceIconSet, gateway: Optional[Gateway] = None
) -> AgentFinding:
    return _single(reference_icons=reference_icons).run(TaskKind.ICON_ANALYSIS, bundle, gateway)


def run_permission_analyst(
    bundle: ApkFeatureBundle, lexicon: RiskLexicon, gateway: Optional[Gateway] = None
) -> AgentFinding:
    return _single(lexicon=lexicon).run(TaskKind.PERMISSION_ANALYSIS, bundle, gateway)


def run_content_analyst(
    bundle: ApkFeatureBundle, lexicon: RiskLexicon, gateway: Optional[Gateway] = None
) -> AgentFinding:
    return _single(lexicon=lexicon).run(TaskKind.CONTENT_ANALYSIS, bundle, gateway)


def run_certificate_checker(
    bundle: ApkFeatureBundle, now: datetime, gateway: Optional[Gateway] = None
) -> AgentFinding:
    return _single(now=now).run(TaskKind.CERTIFICATE_CHECK, bundle, gateway)


def run_link_analyst(
    bundle: ApkFeatureBundle, corpus_index: Optional[CorpusIndex], gateway: Optional[Gateway] = None
) -> AgentFinding:
    return _single(corpus_index=corpus_index).run(TaskKind.LINK_ANALYSIS, bundle, gateway)
