"""Shared enumerations, agent findings and verdicts."""

import enum
import math
from dataclasses import dataclass
from typing import Any, Optional


class FraudCategory(str, enum.Enum):
    """Closed verdict taxonomy. Declaration order is the tie-break order."""

    LEGITIMATE = "legitimate"
    GAMBLING = "gambling"
    SCAM = "scam"
    SEXUAL_CONTENT = "sexual_content"
    OTHER_FRAUD = "other_fraud"

    @property
    def is_fraud(self) -> bool:
        return self is not FraudCategory.LEGITIMATE

    @classmethod
    def parse(cls, value: str) -> "FraudCategory":
        """Parse a serialized category.

        Raises:
            ValueError: If the value is not one of the five categories
        """
        try:
            return cls(value)
        except ValueError:
            raise ValueError(
                f"Unknown fraud category '{value}'. Expected one of: "
                + ", ".join(c.value for c in cls)
            ) from None


FRAUD_CATEGORIES = tuple(c for c in FraudCategory if c.is_fraud)


class AgentKind(str, enum.Enum):
    DECISION_MAKING = "decision_making"
    ANALYTICAL = "analytical"


class AgentId(str, enum.Enum):
    TASK_MASTER = "task_master"
    PACKAGE_TRACER = "package_tracer"
    ICON_ANALYST = "icon_analyst"
    PERMISSION_ANALYST = "permission_analyst"
    CONTENT_ANALYST = "content_analyst"
    CERTIFICATE_CHECKER = "certificate_checker"
    LINK_ANALYST = "link_analyst"
    DECISION_MAKER = "decision_maker"

    @property
    def kind(self) -> AgentKind:
        if self in (AgentId.TASK_MASTER, AgentId.DECISION_MAKER):
            return AgentKind.DECISION_MAKING
        return AgentKind.ANALYTICAL


class TaskKind(str, enum.Enum):
    """Work the Task Master can assign; one kind per analytical agent."""

    PACKAGE_TRACE = "PackageTrace"
    ICON_ANALYSIS = "IconAnalysis"
    PERMISSION_ANALYSIS = "PermissionAnalysis"
    CONTENT_ANALYSIS = "ContentAnalysis"
    CERTIFICATE_CHECK = "CertificateCheck"
    LINK_ANALYSIS = "LinkAnalysis"

    @property
    def agent(self) -> AgentId:
        return TASK_AGENTS[self]

    @classmethod
    def lookup(cls, value: str) -> Optional["TaskKind"]:
        """Match a task kind by value or name, ignoring case and underscores."""
        key = value.replace("_", "").replace("-", "").lower()
        for kind in cls:
            if key in (kind.value.lower(), kind.name.replace("_", "").lower()):
                return kind
        return None


TASK_AGENTS = {
    TaskKind.PACKAGE_TRACE: AgentId.PACKAGE_TRACER,
    TaskKind.ICON_ANALYSIS: AgentId.ICON_ANALYST,
    TaskKind.PERMISSION_ANALYSIS: AgentId.PERMISSION_ANALYST,
    TaskKind.CONTENT_ANALYSIS: AgentId.CONTENT_ANALYST,
    TaskKind.CERTIFICATE_CHECK: AgentId.CERTIFICATE_CHECKER,
    TaskKind.LINK_ANALYSIS: AgentId.LINK_ANALYST,
}
AGENT_TASKS = {agent: kind for kind, agent in TASK_AGENTS.items()}

Evidence = tuple[str, str]


@dataclass(frozen=True)
class AgentFinding:
    """Structured result of one agent task.

    A finding whose ``risk_score`` is None is an abstention; it is recorded
    but carries no weight in the decision.
    """

    agent_id: AgentId
    risk_score: Optional[float]
    category_hint: Optional[FraudCategory] = None
    evidence: tuple[Evidence, ...] = ()
    needs: tuple[TaskKind, ...] = ()
    raw_response: str = ""
    abstention_reason: Optional[str] = None
    dropped_needs: int = 0

    def __post_init__(self) -> None:
        if self.risk_score is not None:
            if math.isnan(self.risk_score) or not 0.0 <= self.risk_score <= 1.0:
                raise ValueError(f"risk_score {self.risk_score} outside [0, 1]")
        for kind, detail in self.evidence:
            if not kind or not detail:
                raise ValueError(f"evidence entries must be non-empty, got ({kind!r}, {detail!r})")

    @property
    def abstained(self) -> bool:
        return self.risk_score is None

    @classmethod
    def abstention(
        cls, agent_id: AgentId, reason: str, raw_response: str = ""
    ) -> "AgentFinding":
        return cls(
            agent_id=agent_id,
            risk_score=None,
            evidence=(("abstention", reason),),
            raw_response=raw_response,
            abstention_reason=reason,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id.value,
            "risk_score": self.risk_score,
            "category_hint": None if self.category_hint is None else self.category_hint.value,
            "evidence": [list(item) for item in self.evidence],
            "needs": [kind.value for kind in self.needs],
            "abstention_reason": self.abstention_reason,
            "dropped_needs": self.dropped_needs,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AgentFinding":
        hint = data.get("category_hint")
        return cls(
            agent_id=AgentId(data["agent_id"]),
            risk_score=data.get("risk_score"),
            category_hint=None if hint is None else FraudCategory(hint),
            evidence=tuple((str(k), str(d)) for k, d in data.get("evidence", [])),
            needs=tuple(TaskKind(n) for n in data.get("needs", [])),
            abstention_reason=data.get("abstention_reason"),
            dropped_needs=int(data.get("dropped_needs", 0)),
        )


@dataclass(frozen=True)
class TraceEvent:
    """One entry of the orchestration trace.

    ``event`` is one of ``skip``, ``assign``, ``finding``, ``rule``, ``forced``
    or ``decision``; ``detail`` is JSON-compatible.
    """

    iteration: int
    event: str
    detail: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"iteration": self.iteration, "event": self.event, "detail": self.detail}


@dataclass(frozen=True)
class Verdict:
    """Final category and fraud probability of one APK, with its evidence trail."""

    fraud_probability: Optional[float]
    category: FraudCategory
    rationale: tuple[str, ...] = ()
    trace: tuple[TraceEvent, ...] = ()
    low_confidence: bool = False
    decided_by: str = "rule"

    @property
    def is_fraud(self) -> bool:
        return self.category.is_fraud

    def to_dict(self) -> dict[str, Any]:
        return {
            "fraud_probability": self.fraud_probability,
            "category": self.category.value,
            "low_confidence": self.low_confidence,
            "decided_by": self.decided_by,
            "rationale": list(self.rationale),
            "trace": [event.to_dict() for event in self.trace],
        }
