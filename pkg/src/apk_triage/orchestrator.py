"""Dynamic task allocation by the Task Master.

The loop assigns pending tasks to their agents, integrates the findings into
the shared state and derives the next tasks from the agents' ``needs`` and
the priority rule, until the evidence suffices or the iteration cap forces a
decision. Tasks of one iteration run concurrently; integration between
iterations is a barrier with a single writer.
"""

import enum
import json
import logging
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .agents import DEFAULT_WEIGHTS, AgentSuite, aggregate_findings, requests_sms_or_contacts
from .bundle import ApkFeatureBundle, build_feature_bundle
from .errors import AgentFailure, CompletionTimeout, GatewayError, PipelineError
from .llm import Gateway
from .models import AgentFinding, AgentId, FraudCategory, TaskKind, TraceEvent, Verdict
from .utils import DECISION_THRESHOLD, DEFAULT_MAX_ITERATIONS, PathLike

logger = logging.getLogger(__name__)

SMS_PRIORITY_RULE = "sms_contacts_priority"
NO_CERTIFICATE = "no certificate"
NO_ICON = "no icon"

MODES = ("rule", "llm")
TASK_ORDER = {kind: position for position, kind in enumerate(TaskKind)}


class TaskPriority(str, enum.Enum):
    NORMAL = "normal"
    ELEVATED = "elevated"


@dataclass(frozen=True)
class Task:
    """One unit of work. ``origin`` is ``initial``, ``requested(<agent>)`` or ``rule(<id>)``."""

    kind: TaskKind
    priority: TaskPriority = TaskPriority.NORMAL
    origin: str = "initial"

    def to_dict(self) -> dict[str, str]:
        return {"kind": self.kind.value, "priority": self.priority.value, "origin": self.origin}


@dataclass(frozen=True)
class PipelinePolicy:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    mode: str = "rule"
    weights: Mapping[TaskKind, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    threshold: float = DECISION_THRESHOLD
    agent_workers: int = len(TaskKind)

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.agent_workers < 1:
            raise ValueError(f"agent_workers must be at least 1, got {self.agent_workers}")


@dataclass
class SharedState:
    """The Task Master's accumulating knowledge for one APK.

    Only the orchestrator mutates it, and only between iterations.
    """

    bundle: ApkFeatureBundle
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    planned_kinds: set[TaskKind] = field(default_factory=set)
    findings: dict[AgentId, AgentFinding] = field(default_factory=dict)
    completed_kinds: set[TaskKind] = field(default_factory=set)
    iteration: int = 0
    skipped: list[tuple[TaskKind, str]] = field(default_factory=list)
    master_requests: set[TaskKind] = field(default_factory=set)
    trace: list[TraceEvent] = field(default_factory=list)

    @property
    def skipped_kinds(self) -> set[TaskKind]:
        return {kind for kind, _ in self.skipped}

    def record(self, kind: TaskKind, finding: AgentFinding) -> None:
        """Integrate one finding; every agent is recorded at most once.

        Raises:
            PipelineError: If the kind already completed or was skipped
        """
        if kind in self.completed_kinds or kind.agent in self.findings:
            raise PipelineError(f"{kind.value} completed twice")
        if kind in self.skipped_kinds:
            raise PipelineError(f"{kind.value} was skipped but ran")
        if finding.agent_id is not kind.agent:
            raise PipelineError(f"{kind.value} answered by {finding.agent_id.value}")
        self.findings[kind.agent] = finding
        self.completed_kinds.add(kind)

    def log(self, event: str, **detail: Any) -> None:
        self.trace.append(TraceEvent(iteration=self.iteration, event=event, detail=detail))


def initial_tasks(
    bundle: ApkFeatureBundle, skipped: Optional[list[tuple[TaskKind, str]]] = None
) -> list[Task]:
    """Determine the initial tasks from the modalities the bundle carries.

    Package tracing and permission analysis always run. Icon analysis and the
    certificate check run only when their modality is present; otherwise the
    reason is appended to ``skipped``. Content and link analysis are demand
    driven and never initial.

    Args:
        bundle: The feature bundle
        skipped: Optional list that receives (kind, reason) for absent modalities

    Returns:
        The initial tasks in task-kind order
    """
    tasks = [Task(TaskKind.PACKAGE_TRACE)]
    if bundle.icon is not None:
        tasks.append(Task(TaskKind.ICON_ANALYSIS))
    elif skipped is not None:
        skipped.append((TaskKind.ICON_ANALYSIS, NO_ICON))
    tasks.append(Task(TaskKind.PERMISSION_ANALYSIS))
    if bundle.certificate is not None:
        tasks.append(Task(TaskKind.CERTIFICATE_CHECK))
    elif skipped is not None:
        skipped.append((TaskKind.CERTIFICATE_CHECK, NO_CERTIFICATE))
    return sorted(tasks, key=lambda task: TASK_ORDER[task.kind])


def _pending(state: SharedState) -> tuple[dict[TaskKind, Task], list[str]]:
    """Return outstanding tasks keyed by kind and the rules that shaped them."""
    blocked = state.completed_kinds | state.skipped_kinds
    pending: dict[TaskKind, Task] = {}

    for agent in AgentId:
        finding = state.findings.get(agent)
        if finding is None:
            continue
        for kind in finding.needs:
            if kind not in blocked and kind not in pending:
                pending[kind] = Task(kind, origin=f"requested({agent.value})")
    for kind in sorted(state.master_requests, key=TASK_ORDER.__getitem__):
        if kind not in blocked and kind not in pending:
            pending[kind] = Task(kind, origin=f"requested({AgentId.TASK_MASTER.value})")

    fired = []
    content = TaskKind.CONTENT_ANALYSIS
    if (
        TaskKind.PERMISSION_ANALYSIS in state.completed_kinds
        and content not in blocked
        and requests_sms_or_contacts(state.bundle.manifest.permissions)
    ):
        existing = pending.get(content)
        origin = existing.origin if existing is not None else f"rule({SMS_PRIORITY_RULE})"
        pending[content] = Task(content, TaskPriority.ELEVATED, origin)
        fired.append(SMS_PRIORITY_RULE)
    return pending, fired


def evidence_sufficient(state: SharedState) -> bool:
    """True when every planned task completed and no finding has unmet needs."""
    if not state.planned_kinds <= state.completed_kinds:
        return False
    pending, _ = _pending(state)
    return not pending


def can_decide(state: SharedState) -> bool:
    """Whether the Decision Maker may be invoked.

    True when the evidence is sufficient, and unconditionally once the
    iteration cap is reached (a forced decision).
    """
    if state.iteration >= state.max_iterations:
        return True
    return evidence_sufficient(state)


def next_tasks(state: SharedState) -> list[Task]:
    """Outstanding tasks, elevated ones first, at most one per kind."""
    pending, _ = _pending(state)
    return sorted(
        pending.values(),
        key=lambda task: (task.priority is not TaskPriority.ELEVATED, TASK_ORDER[task.kind]),
    )


def _execute(
    suite: AgentSuite, task: Task, bundle: ApkFeatureBundle, gateway: Optional[Gateway]
) -> AgentFinding:
    agent = task.kind.agent
    try:
        return suite.run(task.kind, bundle, gateway)
    except PipelineError:
        raise
    except CompletionTimeout:
        logger.warning("agent=%s timed out, abstaining", agent.value)
        return AgentFinding.abstention(agent, "timeout")
    except AgentFailure as e:
        cause = type(e.__cause__).__name__ if e.__cause__ is not None else type(e).__name__
        logger.warning("agent=%s failed (%s), abstaining", agent.value, e)
        return AgentFinding.abstention(agent, f"failure: {cause}")
    except Exception as e:
        logger.warning("agent=%s failed (%s: %s), abstaining", agent.value, type(e).__name__, e)
        return AgentFinding.abstention(agent, f"failure: {type(e).__name__}")


def _consult_task_master(state: SharedState, suite: AgentSuite, gateway: Gateway) -> None:
    context = json.dumps(
        {
            "completed": sorted(kind.value for kind in state.completed_kinds),
            "skipped": [[kind.value, reason] for kind, reason in state.skipped],
            "findings": {a.value: f.to_dict() for a, f in sorted(state.findings.items())},
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    slots = {"package": state.bundle.manifest.package_name, "context": context}
    try:
        answer = gateway.consult(
            AgentId.TASK_MASTER, suite.roles[AgentId.TASK_MASTER].template, slots
        )
    except GatewayError as e:
        logger.warning("task master failed (%s), keeping agent requests only", type(e).__name__)
        return
    state.master_requests.update(answer.needs)


def run_pipeline(
    bundle: ApkFeatureBundle,
    agents: AgentSuite,
    gateway: Optional[Gateway] = None,
    policy: Optional[PipelinePolicy] = None,
) -> Verdict:
    """Run the task allocation loop and return the Decision Maker's verdict.

    Args:
        bundle: Features of the APK under analysis
        agents: The registered agent suite
        gateway: LLM gateway; required in llm mode, ignored in rule mode
        policy: Iteration cap, mode and decision parameters

    Returns:
        The verdict, carrying the complete trace

    Raises:
        PipelineError: If an internal invariant is breached
    """
    policy = policy or PipelinePolicy()
    if policy.mode == "llm" and gateway is None:
        raise PipelineError("llm mode needs a gateway")
    active_gateway = gateway if policy.mode == "llm" else None

    skipped: list[tuple[TaskKind, str]] = []
    tasks = initial_tasks(bundle, skipped)
    state = SharedState(
        bundle=bundle,
        max_iterations=policy.max_iterations,
        planned_kinds={task.kind for task in tasks},
        skipped=skipped,
    )
    for kind, reason in skipped:
        state.log("skip", kind=kind.value, reason=reason)

    workers = max(1, min(policy.agent_workers, len(TaskKind)))
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="agent") as pool:
        while not can_decide(state):
            if state.iteration > 0:
                _, fired = _pending(state)
                tasks = next_tasks(state)
                for rule in fired:
                    state.log("rule", rule=rule, kind=TaskKind.CONTENT_ANALYSIS.value)
            if not tasks:
                raise PipelineError("evidence insufficient but no task is pending")
            if any(task.kind in state.skipped_kinds for task in tasks):
                raise PipelineError("a skipped task kind was scheduled")

            state.iteration += 1
            state.log("assign", tasks=[task.to_dict() for task in tasks])
            futures = [
                pool.submit(_execute, agents, task, bundle, active_gateway) for task in tasks
            ]
            # Integrate in assignment order regardless of completion order
            for task, future in zip(tasks, futures):
                finding = future.result()
                state.record(task.kind, finding)
                state.log("finding", kind=task.kind.value, finding=finding.to_dict())
                logger.info(
                    "agent=%s risk=%s iteration=%d",
                    finding.agent_id.value,
                    "abstain" if finding.risk_score is None else f"{finding.risk_score:.3f}",
                    state.iteration,
                )
            if active_gateway is not None:
                _consult_task_master(state, agents, active_gateway)

    if not evidence_sufficient(state):
        outstanding = [task.kind.value for task in next_tasks(state)]
        state.log("forced", max_iterations=state.max_iterations, outstanding=outstanding)
        logger.info("forced decision after %d iterations", state.iteration)

    verdict = agents.decide(state.findings, active_gateway)
    state.log(
        "decision",
        fraud_probability=verdict.fraud_probability,
        category=verdict.category.value,
        low_confidence=verdict.low_confidence,
        decided_by=verdict.decided_by,
    )
    return replace(verdict, trace=tuple(state.trace))


def analyze_path(
    path: PathLike,
    agents: AgentSuite,
    gateway: Optional[Gateway] = None,
    policy: Optional[PipelinePolicy] = None,
) -> Verdict:
    """Extract an APK and run the pipeline on it."""
    return run_pipeline(build_feature_bundle(path), agents, gateway, policy)


def replay_decision(
    trace: Iterable[TraceEvent], policy: Optional[PipelinePolicy] = None
) -> tuple[Optional[float], FraudCategory]:
    """Recompute the rule-mode decision from the findings recorded in a trace.

    Args:
        trace: Trace events of a completed run
        policy: Weights and threshold to aggregate with

    Returns:
        Tuple of (fraud probability or None, category)
    """
    policy = policy or PipelinePolicy()
    findings: dict[AgentId, AgentFinding] = {}
    for event in trace:
        if event.event == "finding":
            finding = AgentFinding.from_dict(event.detail["finding"])
            findings[finding.agent_id] = finding
    probability, category, _ = aggregate_findings(findings, policy.weights, policy.threshold)
    return probability, category
