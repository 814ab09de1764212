"""Four-level decision structure: downward policies, upward escalation,
and the knowledge plane's merged network-wide view.

Policies are declarative allow/deny rules with optional numeric bounds,
never executable code, so they can be serialized into POLICY messages,
stored in agent facts, and evaluated inside plan validation. Escalation
climbs exactly one level; the knowledge view merges per-node contributions
with latest-timestamp conflict resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .core import AgentId, FunctionKind, DecisionLevel, MasdnError, level_of


class InvalidDirection(MasdnError):
    """Policy issuer is not strictly above every kind in its scope."""


class NoUpperAgent(MasdnError):
    """No live agent exists one level above the escalating agent."""


@dataclass(frozen=True)
class PolicyRule:
    """One allow/deny clause over plan steps.

    action_kind and target_class accept "*" as a wildcard. A deny rule with
    max_per_target denies only the steps that would push the per-target
    count beyond the bound; a deny rule without a bound denies every
    matching step.
    """

    effect: str  # "allow" | "deny"
    action_kind: str = "*"
    target_class: str = "*"  # "switch" | "agent" | "endpoint" | "*"
    max_per_target: int | None = None

    def __post_init__(self) -> None:
        if self.effect not in ("allow", "deny"):
            raise ValueError(f"effect must be allow or deny, got {self.effect!r}")

    def matches(self, action_kind: str, target_class: str) -> bool:
        return self.action_kind in ("*", action_kind) and self.target_class in (
            "*",
            target_class,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "effect": self.effect,
            "action_kind": self.action_kind,
            "target_class": self.target_class,
            "max_per_target": self.max_per_target,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PolicyRule:
        return cls(
            effect=d["effect"],
            action_kind=d.get("action_kind", "*"),
            target_class=d.get("target_class", "*"),
            max_per_target=d.get("max_per_target"),
        )


@dataclass(frozen=True)
class Policy:
    """A constraint issued from above onto a set of function kinds."""

    policy_id: str
    issuer_level: DecisionLevel
    scope: frozenset[FunctionKind]
    rules: tuple[PolicyRule, ...]

    def __post_init__(self) -> None:
        for kind in self.scope:
            if self.issuer_level <= level_of(kind):
                raise InvalidDirection(
                    f"policy {self.policy_id!r}: issuer level {self.issuer_level.name} "
                    f"is not above scoped kind {kind.value} ({level_of(kind).name})"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy_id": self.policy_id,
            "issuer_level": self.issuer_level.name.lower(),
            "scope": sorted(k.value for k in self.scope),
            "rules": [r.to_dict() for r in self.rules],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Policy:
        return cls(
            policy_id=d["policy_id"],
            issuer_level=DecisionLevel[d["issuer_level"].upper()],
            scope=frozenset(FunctionKind(k) for k in d["scope"]),
            rules=tuple(PolicyRule.from_dict(r) for r in d.get("rules", [])),
        )


def push_policy(
    policy: Policy,
    live_agents: Iterable[AgentId],
    deliver: Callable[[AgentId, dict[str, Any]], None],
) -> int:
    """Deliver a policy to every live agent whose kind is in scope.

    Returns the number of agents the policy was delivered to. The Policy
    constructor already rejects wrong-direction policies; this re-raises
    for policies built through from_dict bypasses.
    """
    for kind in policy.scope:
        if policy.issuer_level <= level_of(kind):
            raise InvalidDirection(policy.policy_id)
    targets = sorted(
        (a for a in live_agents if a.kind in policy.scope),
        key=lambda a: (a.kind.value, a.instance),
    )
    doc = policy.to_dict()
    for target in targets:
        deliver(target, doc)
    return len(targets)


@dataclass(frozen=True)
class Escalation:
    """An issue raised one level up for handling."""

    source: AgentId
    issue: Any
    raised_at: int

    @property
    def target_level(self) -> DecisionLevel:
        lvl = self.source.level
        if lvl is DecisionLevel.NETWORK:
            raise NoUpperAgent(f"{self.source} is already at the top level")
        return DecisionLevel(lvl + 1)


@dataclass(frozen=True)
class EscalationReceipt:
    handler: AgentId
    escalation: Escalation


# which kind preferentially handles escalations arriving at each level
_PREFERRED_HANDLER = {
    DecisionLevel.NODE: FunctionKind.FAULT,
    DecisionLevel.NETWORK: FunctionKind.ORCHESTRATION,
}


def route_escalation(esc: Escalation, candidates: Iterable[AgentId]) -> AgentId:
    """Pick the one upper-level agent that receives the issue.

    Candidates are live agents; only those exactly one level above the
    source qualify. The level's preferred handler kind wins when present;
    ties break on lowest instance id.
    """
    target_level = esc.target_level
    pool = [a for a in candidates if a.level is target_level]
    if not pool:
        raise NoUpperAgent(
            f"no live agent at level {target_level.name} to handle escalation from {esc.source}"
        )
    preferred = _PREFERRED_HANDLER.get(target_level)
    pool.sort(key=lambda a: (0 if a.kind is preferred else 1, a.kind.value, a.instance))
    return pool[0]


def escalate(
    esc: Escalation,
    candidates: Iterable[AgentId],
    deliver: Callable[[AgentId, Escalation], None],
) -> EscalationReceipt:
    """Route and deliver an escalation, returning the handling receipt."""
    handler = route_escalation(esc, candidates)
    deliver(handler, esc)
    return EscalationReceipt(handler=handler, escalation=esc)


@dataclass
class KnowledgeView:
    """Merged per-node views: node id -> key -> (value, updated_at)."""

    nodes: dict[str, dict[str, tuple[Any, int]]] = field(default_factory=dict)
    merged_at: int = 0


def aggregate_view(
    contributions: Sequence[KnowledgeView], merged_at: int | None = None
) -> KnowledgeView:
    """Union of contributions; conflicting keys resolve to the latest
    updated_at (later contribution wins exact ties). Idempotent."""
    merged: dict[str, dict[str, tuple[Any, int]]] = {}
    for view in contributions:
        for node, entries in view.nodes.items():
            slot = merged.setdefault(node, {})
            for key, (value, updated_at) in entries.items():
                if key not in slot or updated_at >= slot[key][1]:
                    slot[key] = (value, updated_at)
    if merged_at is None:
        merged_at = max((v.merged_at for v in contributions), default=0)
    return KnowledgeView(nodes=merged, merged_at=merged_at)
