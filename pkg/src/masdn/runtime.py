"""Agent execution engine.

Every agent is an atomic unit around one pure cognition function. The host
drives each delivered message through the same six stages —

    input -> facts -> cognition -> planning -> validation -> output

— and appends one record per stage to the run log. Cognition functions are
pure: they see a facts snapshot plus the decoded input and return a
CognitionOutcome; all side effects (facts writes, outgoing messages) happen
in the host, and only after validation passes. Action requests that fail
validation are replaced by a single violation event, so a later audit of
the run log can prove that no request was ever emitted without a passing
validation record in the same pipeline run.

A cognition outcome's decision is a plain dict with optional keys:

    plan       list of {"action","target","params"} step dicts
    responses  list of bodies answered to the input's sender
    events     list of {"topic","body"} notifications
    facts      list of [key, value] writes applied after validation
    escalate   an issue dict; forces escalation regardless of confidence

Confidence below ESCALATION_CONFIDENCE replaces the whole decision with a
single escalate step routed one level up the hierarchy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol

from .core import (
    AgentId,
    Destination,
    MasdnError,
    Message,
    MessageFactory,
    MessageKind,
)
from .hierarchy import Escalation, NoUpperAgent, Policy, route_escalation
from .pps import DEFAULT_PROFILES, MalformedFrame, StackProfile, decode_body, encode_body

ESCALATION_CONFIDENCE = 0.5

VIOLATION_TOPIC = "events.violation"


class DuplicateAgent(MasdnError):
    pass


class UnknownCognition(MasdnError):
    pass


class AgentNotLive(MasdnError):
    pass


class DecodeError(MasdnError):
    """Input payload could not be parsed into a structured body."""


# ---------------------------------------------------------------------------
# facts


@dataclass
class _FactEntry:
    value: Any
    version: int
    updated_at: int


class FactsStore:
    """Versioned key/value state local to one agent.

    Values are deep-copied on write so callers cannot mutate stored state
    behind the store's back; snapshots are cheap map copies and must be
    treated as read-only by cognition code.
    """

    def __init__(self) -> None:
        self._entries: dict[str, _FactEntry] = {}

    def put(self, key: str, value: Any, now: int) -> int:
        prev = self._entries.get(key)
        version = 1 if prev is None else prev.version + 1
        self._entries[key] = _FactEntry(copy.deepcopy(value), version, now)
        return version

    def get(self, key: str, default: Any = None) -> Any:
        entry = self._entries.get(key)
        return default if entry is None else entry.value

    def version(self, key: str) -> int:
        entry = self._entries.get(key)
        return 0 if entry is None else entry.version

    def keys(self) -> list[str]:
        return sorted(self._entries)

    def snapshot(self) -> dict[str, Any]:
        return {k: e.value for k, e in self._entries.items()}

    def export(self, keys: Iterable[str]) -> dict[str, dict[str, Any]]:
        """Versioned digest of selected keys, for the knowledge plane."""
        out: dict[str, dict[str, Any]] = {}
        for key in keys:
            entry = self._entries.get(key)
            if entry is not None:
                out[key] = {
                    "value": entry.value,
                    "version": entry.version,
                    "updated_at": entry.updated_at,
                }
        return out

    def restore(self, digest: dict[str, dict[str, Any]]) -> None:
        """Seed entries from an exported digest, keeping versions."""
        for key, doc in digest.items():
            self._entries[key] = _FactEntry(
                copy.deepcopy(doc["value"]), doc["version"], doc["updated_at"]
            )


# ---------------------------------------------------------------------------
# plans and validation


@dataclass(frozen=True)
class PlanStep:
    action: str
    target: Destination
    params: dict[str, Any] = field(default_factory=dict)

    def target_class(self) -> str:
        if isinstance(self.target, AgentId):
            return "agent"
        if self.action in ("install-rule", "remove-rule"):
            return "switch"
        return "endpoint"


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]

    @classmethod
    def of(cls, *steps: PlanStep) -> Plan:
        return cls(steps=tuple(steps))


@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violations: tuple[Violation, ...] = ()
    note: str = ""


def _rule_key(params: dict[str, Any]) -> str | None:
    rule = params.get("rule")
    if not isinstance(rule, dict):
        return None
    match = rule.get("match", {})
    return f"{match.get('src')}|{match.get('dst')}|{rule.get('priority')}"


def _check_policies(
    plan: Plan, facts: dict[str, Any], policies: list[Policy]
) -> list[Violation]:
    """Deny rules win over allow rules; bounded deny rules reject only the
    steps that would push the projected per-target count past the bound."""
    violations: list[Violation] = []
    # projected rule keys per switch: existing table plus in-plan changes
    projected: dict[str, set[str]] = {}
    existing = facts.get("switch-rules", {})
    if isinstance(existing, dict):
        for sw, rules in existing.items():
            projected[sw] = set(rules)
    for policy in policies:
        for rule in policy.rules:
            if rule.effect != "deny":
                continue
            for step in plan.steps:
                if not rule.matches(step.action, step.target_class()):
                    continue
                if rule.max_per_target is None:
                    violations.append(
                        Violation(
                            policy.policy_id,
                            f"action {step.action!r} on {step.target} is denied",
                        )
                    )
                    continue
                slot = projected.setdefault(str(step.target), set())
                key = _rule_key(step.params)
                if step.action == "remove-rule":
                    slot.discard(key or "")
                    continue
                if key is not None and key in slot:
                    continue  # replaces an existing entry, count unchanged
                if len(slot) + 1 > rule.max_per_target:
                    violations.append(
                        Violation(
                            policy.policy_id,
                            f"{step.target}: {len(slot) + 1} rules would exceed "
                            f"bound {rule.max_per_target}",
                        )
                    )
                else:
                    slot.add(key or f"anon-{len(slot)}")
    return violations


def validate_plan(
    plan: Plan, facts: dict[str, Any], policies: Iterable[Policy] = ()
) -> ValidationReport:
    """Check a plan against the agent's current facts and active policies.

    Violations carry stable constraint ids: "empty-plan" for a plan with no
    steps, "missing-topology" / "unknown-target" for steps that reference
    state the agent does not know about, and the policy id for policy hits.
    """
    violations: list[Violation] = []
    if not plan.steps:
        violations.append(Violation("empty-plan", "plan has no steps"))
    topology = facts.get("topology")
    peers = set(facts.get("peers", ()))
    endpoints = set(facts.get("endpoints", ()))
    for step in plan.steps:
        cls = step.target_class()
        if cls == "agent":
            if str(step.target) not in peers:
                violations.append(
                    Violation("unknown-target", f"agent {step.target} is not a known peer")
                )
        elif cls == "switch":
            if topology is None:
                violations.append(
                    Violation(
                        "missing-topology",
                        f"no topology facts to justify acting on switch {step.target!r}",
                    )
                )
            elif step.target not in topology.get("switches", ()):
                violations.append(
                    Violation(
                        "unknown-target", f"switch {step.target!r} not in known topology"
                    )
                )
        else:
            if step.target not in endpoints:
                violations.append(
                    Violation("unknown-target", f"endpoint {step.target!r} is not known")
                )
    violations.extend(_check_policies(plan, facts, list(policies)))
    return ValidationReport(passed=not violations, violations=tuple(violations))


# ---------------------------------------------------------------------------
# cognition


@dataclass(frozen=True)
class AgentInput:
    message: Message
    body: Any


@dataclass(frozen=True)
class CognitionOutcome:
    decision: dict[str, Any]
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def decision(
    plan: list[dict[str, Any]] | None = None,
    responses: list[Any] | None = None,
    events: list[dict[str, Any]] | None = None,
    facts: list[tuple[str, Any]] | None = None,
    escalate: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Convenience builder for the decision dict shape."""
    out: dict[str, Any] = {}
    if plan:
        out["plan"] = plan
    if responses:
        out["responses"] = responses
    if events:
        out["events"] = events
    if facts:
        out["facts"] = facts
    if escalate is not None:
        out["escalate"] = escalate
    return out


def step(action: str, target: Destination, **params: Any) -> dict[str, Any]:
    """Convenience builder for one plan step dict."""
    return {"action": action, "target": target, "params": params}


class CognitionFn(Protocol):
    def __call__(self, facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome: ...


class IngestFn(Protocol):
    def __call__(self, facts: dict[str, Any], inp: AgentInput) -> list[tuple[str, Any]]: ...


@dataclass(frozen=True)
class CognitionImpl:
    """A named cognition: the pure decide function, an optional facts-stage
    ingest hook, and the fact keys worth exporting to the knowledge plane."""

    name: str
    decide: CognitionFn
    ingest: IngestFn | None = None
    digest_keys: tuple[str, ...] = ()


_COGNITIONS: dict[str, CognitionImpl] = {}


def register_cognition(
    name: str,
    *,
    ingest: IngestFn | None = None,
    digest_keys: tuple[str, ...] = (),
) -> Callable[[CognitionFn], CognitionFn]:
    def deco(fn: CognitionFn) -> CognitionFn:
        _COGNITIONS[name] = CognitionImpl(name, fn, ingest, digest_keys)
        return fn

    return deco


def cognition(name: str) -> CognitionImpl:
    impl = _COGNITIONS.get(name)
    if impl is None:
        raise UnknownCognition(name)
    return impl


# ---------------------------------------------------------------------------
# agents and the host


@dataclass(frozen=True)
class AgentSpec:
    agent: AgentId
    cognition: str
    initial_facts: dict[str, Any] = field(default_factory=dict)
    subscriptions: tuple[str, ...] = ()
    profiles: tuple[StackProfile, ...] = DEFAULT_PROFILES


@dataclass
class Agent:
    spec: AgentSpec
    facts: FactsStore
    live: bool = True

    @property
    def id(self) -> AgentId:
        return self.spec.agent

    @property
    def impl(self) -> CognitionImpl:
        return cognition(self.spec.cognition)


_STEP_MSG_KIND = {
    "push-policy": MessageKind.POLICY,
    "deliver-event": MessageKind.EVENT,
    "forward-event": MessageKind.EVENT,
}


class AgentHost:
    """Owns a set of live agents and runs the six-stage pipeline for them."""

    def __init__(
        self,
        factory: MessageFactory | None = None,
        log_sink: Callable[[dict[str, Any]], None] | None = None,
    ) -> None:
        self.now = 0
        self.factory = factory or MessageFactory()
        self.log_sink = log_sink
        self.stage_log: list[dict[str, Any]] = []
        self.agents: dict[AgentId, Agent] = {}
        self.on_spawn: Callable[[Agent], None] | None = None
        self.on_kill: Callable[[Agent], None] | None = None
        # override to widen the candidate pool beyond this host (e.g. tests)
        self.escalation_candidates: Callable[[], list[AgentId]] = lambda: sorted(
            self.agents
        )
        self._runs = 0
        self._seq = 0

    # -- lifecycle ---------------------------------------------------------

    def spawn_agent(self, spec: AgentSpec) -> Agent:
        if spec.agent in self.agents:
            raise DuplicateAgent(str(spec.agent))
        cognition(spec.cognition)  # raises UnknownCognition up front
        agent = Agent(spec=spec, facts=FactsStore())
        for key, value in spec.initial_facts.items():
            agent.facts.put(key, value, self.now)
        self.agents[spec.agent] = agent
        self._emit(
            {"stage": "spawn", "agent": str(spec.agent), "cognition": spec.cognition}
        )
        if self.on_spawn:
            self.on_spawn(agent)
        return agent

    def kill_agent(self, agent_id: AgentId) -> None:
        agent = self.agents.pop(agent_id, None)
        if agent is None:
            raise AgentNotLive(str(agent_id))
        agent.live = False
        self._emit({"stage": "kill", "agent": str(agent_id)})
        if self.on_kill:
            self.on_kill(agent)

    def get(self, agent_id: AgentId) -> Agent:
        agent = self.agents.get(agent_id)
        if agent is None or not agent.live:
            raise AgentNotLive(str(agent_id))
        return agent

    def update_facts(self, agent_id: AgentId, key: str, value: Any) -> int:
        return self.get(agent_id).facts.put(key, value, self.now)

    # -- pipeline ----------------------------------------------------------

    def process_input(self, agent_id: AgentId, msg: Message) -> list[Message]:
        agent = self.get(agent_id)
        self._runs += 1
        run = self._runs

        def log(stage: str, **detail: Any) -> None:
            self._emit(
                {"stage": stage, "agent": str(agent_id), "run": run, "msg_id": msg.msg_id, **detail}
            )

        log("input", kind=msg.kind.value, src=str(msg.src), bytes=len(msg.payload))
        try:
            body = decode_body(msg.payload)
        except MalformedFrame as exc:
            raise DecodeError(str(exc)) from exc
        inp = AgentInput(message=msg, body=body)

        written: list[str] = []
        if msg.kind is MessageKind.POLICY and isinstance(body, dict):
            policies = [p for p in agent.facts.get("policies", []) if p.get("policy_id") != body.get("policy_id")]
            policies.append(body)
            policies.sort(key=lambda p: p.get("policy_id", ""))
            agent.facts.put("policies", policies, self.now)
            written.append("policies")
        impl = agent.impl
        if impl.ingest is not None:
            for key, value in impl.ingest(agent.facts.snapshot(), inp) or []:
                agent.facts.put(key, value, self.now)
                written.append(key)
        snapshot = agent.facts.snapshot()
        log("facts", written=written)

        outcome = impl.decide(snapshot, inp)
        dec = outcome.decision
        log("cognition", confidence=outcome.confidence, decided=sorted(dec))

        escalated = dec.get("escalate") is not None or outcome.confidence < ESCALATION_CONFIDENCE
        plan, note = self._build_plan(agent, dec, escalated, snapshot)
        log(
            "planning",
            steps=[[s.action, str(s.target)] for s in plan.steps],
            escalated=escalated,
            note=note,
        )

        if plan.steps:
            policies = [Policy.from_dict(p) for p in snapshot.get("policies", [])]
            report = validate_plan(plan, snapshot, policies)
        else:
            report = ValidationReport(passed=True, note="no-plan")
        log(
            "validation",
            passed=report.passed,
            violations=[[v.constraint, v.detail] for v in report.violations],
            note=report.note,
        )

        outputs = self._materialize(agent, msg, dec, plan, report, escalated)
        log("output", emitted=[[m.kind.value, str(m.dst)] for m in outputs])
        return outputs

    # -- internals ---------------------------------------------------------

    def _build_plan(
        self,
        agent: Agent,
        dec: dict[str, Any],
        escalated: bool,
        snapshot: dict[str, Any],
    ) -> tuple[Plan, str]:
        if escalated:
            issue = dec.get("escalate") or {"reason": "low-confidence"}
            esc = Escalation(source=agent.id, issue=issue, raised_at=self.now)
            try:
                handler = route_escalation(esc, self.escalation_candidates())
            except NoUpperAgent as exc:
                return Plan.of(), f"escalation dead-end: {exc}"
            return Plan.of(
                PlanStep(
                    "escalate",
                    handler,
                    {"issue": issue, "source": str(agent.id), "raised_at": self.now},
                )
            ), ""
        steps = tuple(
            PlanStep(d["action"], _parse_target(d["target"]), d.get("params", {}))
            for d in dec.get("plan", [])
        )
        return Plan(steps=steps), ""

    def _materialize(
        self,
        agent: Agent,
        msg: Message,
        dec: dict[str, Any],
        plan: Plan,
        report: ValidationReport,
        escalated: bool,
    ) -> list[Message]:
        if not report.passed:
            body = {
                "agent": str(agent.id),
                "violations": [[v.constraint, v.detail] for v in report.violations],
                "correlation_id": msg.msg_id,
                "steps": [
                    {"action": s.action, "target": str(s.target), "params": s.params}
                    for s in plan.steps
                ],
            }
            return [self._event(agent, VIOLATION_TOPIC, body)]

        outputs: list[Message] = []
        for pstep in plan.steps:
            outputs.append(self._step_message(agent, pstep))
        if not escalated:
            for body in dec.get("responses", []):
                outputs.append(
                    self.factory.new_message(
                        src=agent.id,
                        dst=msg.src,
                        kind=MessageKind.RESPONSE,
                        payload=encode_body(body),
                        now=self.now,
                        correlation_id=msg.msg_id,
                    )
                )
            for ev in dec.get("events", []):
                outputs.append(self._event(agent, ev["topic"], ev["body"]))
            for key, value in dec.get("facts", []):
                agent.facts.put(key, value, self.now)
        return outputs

    def _step_message(self, agent: Agent, pstep: PlanStep) -> Message:
        kind = _STEP_MSG_KIND.get(pstep.action, MessageKind.REQUEST)
        if pstep.action == "push-policy":
            body: Any = pstep.params["policy"]
        elif pstep.action in ("deliver-event", "forward-event"):
            body = pstep.params["event"]
        else:
            body = {"op": pstep.action, **pstep.params}
        dst: Destination = pstep.target
        if pstep.action in ("install-rule", "remove-rule") and isinstance(dst, str):
            dst = f"switch.{dst}"
        elif pstep.action in ("spawn-agent", "despawn-agent") and isinstance(dst, str):
            dst = "host.control"
        return self.factory.new_message(
            src=agent.id,
            dst=dst,
            kind=kind,
            payload=encode_body(body),
            now=self.now,
        )

    def _event(self, agent: Agent, topic: str, body: Any) -> Message:
        return self.factory.new_message(
            src=agent.id,
            dst=topic,
            kind=MessageKind.EVENT,
            payload=encode_body({"topic": topic, "body": body}),
            now=self.now,
        )

    def _emit(self, record: dict[str, Any]) -> None:
        self._seq += 1
        record = {"seq": self._seq, "at": self.now, **record}
        self.stage_log.append(record)
        if self.log_sink:
            self.log_sink(record)


def _parse_target(target: Any) -> Destination:
    if isinstance(target, AgentId):
        return target
    if isinstance(target, str) and "#" in target:
        return AgentId.parse(target)
    return str(target)
