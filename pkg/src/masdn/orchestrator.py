"""The network-level orchestration agent.

Given a run configuration it recomposes the controller out of atomic
function agents: it expands the requested chain to its dependency closure,
adds the infrastructure roster (registry, brokers, knowledge plane, fault
handler, discovery, monitoring), places everything onto the inventory,
spawns it all, subscribes everyone, and pushes the network-level policies.

Bootstrap happens in two passes driven by two control.bootstrap events.
The first ("facts") computes and stores the roster, the per-agent specs,
the placement, and the liveness table; the second ("spawn") turns those
facts into the actual spawn/register/subscribe/push-policy plan. The split
exists because a plan is validated against the facts snapshot taken before
the decision ran, so the spawn plan must be able to see the roster facts
written by an earlier pipeline run.

After bootstrap the orchestrator is a liveness supervisor: heartbeats feed
a per-agent clock, the knowledge-plane digests feed a state mirror, and an
agent silent for MISSED_HEARTBEATS intervals is respawned with its mirror
state restored. Dead brokers are special: without brokers heartbeats stop
flowing, making everyone look dead at once, so dead brokers are replaced
first and every liveness clock is reset to give the revived event plane a
full detection window before anyone else is declared lost.
"""

from __future__ import annotations

import zlib
from typing import Any

from .core import AgentId, FunctionKind, DecisionLevel, level_of
from .functions import bootstrap_steps, event_of, heartbeat, request_op
from .hierarchy import Policy
from .logic import (
    HEARTBEAT_INTERVAL,
    MISSED_HEARTBEATS,
    CapacityError,
    chain_closure,
    first_fit_decreasing,
)
from .runtime import AgentInput, CognitionOutcome, decision, register_cognition, step

BROKER_COUNT = {"centralized": 1, "distributed": 3, "hybrid": 5}

INFRA_KINDS = (
    FunctionKind.MONITORING,
    FunctionKind.FAULT,
    FunctionKind.AUTOCONF_DISCOVERY,
    FunctionKind.KNOWLEDGE_PLANE,
)

_SUBSCRIPTIONS: dict[FunctionKind, list[str]] = {
    FunctionKind.TOPOLOGY: ["events.link", "events.linkstate", "events.tick"],
    FunctionKind.ROUTING: ["events.link", "events.linkstate", "facts.topology", "events.tick"],
    FunctionKind.QOS: ["events.link", "events.linkstate", "facts.topology", "events.tick"],
    FunctionKind.FORWARDING: [
        "events.link",
        "events.linkstate",
        "facts.topology",
        "events.tick",
    ],
    FunctionKind.CLASSIFIER: ["events.tick"],
    FunctionKind.SESSION: [
        "events.packet_in",
        "events.link",
        "events.linkstate",
        "events.violation",
        "events.tick",
    ],
    FunctionKind.MONITORING: ["events.stats", "events.tick"],
    FunctionKind.FAULT: ["events.tick"],
    FunctionKind.AUTOCONF_DISCOVERY: ["registry.changed", "events.tick"],
    FunctionKind.KNOWLEDGE_PLANE: ["kp.digest", "events.tick"],
    FunctionKind.REGISTRY: ["hb", "events.tick"],
    FunctionKind.ORCHESTRATION: ["hb", "kp.digest", "events.tick"],
}

# facts the topology-aware agents start from
_NEEDS_VIEW = (
    FunctionKind.TOPOLOGY,
    FunctionKind.ROUTING,
    FunctionKind.QOS,
    FunctionKind.FORWARDING,
    FunctionKind.SESSION,
)


def broker_ids(strategy: str) -> list[str]:
    return [
        str(AgentId(FunctionKind.EVENT_DISTRIBUTION, i))
        for i in range(BROKER_COUNT[strategy])
    ]


def home_broker(strategy: str, agent: str) -> str:
    """The broker an agent publishes through (and subscribes at)."""
    brokers = broker_ids(strategy)
    if strategy == "centralized":
        return brokers[0]
    if strategy == "distributed":
        return brokers[zlib.crc32(agent.encode("utf-8")) % len(brokers)]
    # hybrid: one broker per decision level, broker 0 is the relay root
    try:
        lvl = level_of(AgentId.parse(agent).kind)
    except ValueError:
        lvl = DecisionLevel.NODE
    return brokers[1 + lvl.value]


def plan_roster(config: dict[str, Any]) -> list[str]:
    """Every agent the run needs, as sorted id strings (orchestrator excluded)."""
    chain = [FunctionKind(k) for k in config.get("chain", ["session"])]
    kinds = set(chain_closure(chain)) | set(INFRA_KINDS) | {FunctionKind.REGISTRY}
    roster = [str(AgentId(kind, 0)) for kind in kinds]
    roster.extend(broker_ids(config.get("event_strategy", "centralized")))
    return sorted(roster)


def _broker_facts(strategy: str, broker: str, brokers: list[str]) -> dict[str, Any]:
    if strategy == "centralized":
        return {"role": "solo"}
    if strategy == "distributed":
        return {"role": "mesh", "brokers": [b for b in brokers if b != broker]}
    if broker == brokers[0]:
        return {"role": "root", "downstream": brokers[1:]}
    return {"role": "level", "root": brokers[0]}


def build_specs(
    config: dict[str, Any], roster: list[str], view: dict[str, Any], me: str
) -> dict[str, dict[str, Any]]:
    """Initial facts + subscriptions for every roster agent, as spec docs
    consumable by the host-control endpoint."""
    strategy = config.get("event_strategy", "centralized")
    brokers = broker_ids(strategy)
    peers = sorted(roster + [me])
    thresholds = config.get("thresholds", {})
    specs: dict[str, dict[str, Any]] = {}
    for agent in roster:
        kind = AgentId.parse(agent).kind
        facts: dict[str, Any] = {
            "self": agent,
            "peers": peers,
            "home-broker": home_broker(strategy, agent),
            "registry": str(AgentId(FunctionKind.REGISTRY, 0)),
            "subscriptions": list(_SUBSCRIPTIONS.get(kind, [])),
            "lease-ttl": config.get("lease_ttl", 40),
        }
        if kind in _NEEDS_VIEW:
            facts["topology"] = view
        if kind is FunctionKind.CLASSIFIER:
            facts["thresholds"] = {
                "size": thresholds.get("size", 100),
                "gap": thresholds.get("gap", 3),
            }
        if kind is FunctionKind.QOS:
            facts["qos-cap-permille"] = config.get("qos_cap_permille", 800)
        if kind is FunctionKind.SESSION:
            facts["schedule"] = config.get("schedule", [])
            facts["proactive"] = bool(config.get("proactive", False))
        if kind is FunctionKind.EVENT_DISTRIBUTION:
            facts["subscriptions"] = []
            facts.update(_broker_facts(strategy, agent, brokers))
        specs[agent] = {
            "agent": agent,
            "cognition": kind.value,
            "initial_facts": facts,
            "profiles": config.get("profiles"),
        }
    return specs


def _spawn_order(roster: list[str]) -> list[str]:
    """Registry first so everyone can register, brokers next so everyone can
    subscribe, then the rest alphabetically."""
    registry = [a for a in roster if a.startswith(FunctionKind.REGISTRY.value + "#")]
    brokers = [a for a in roster if a.startswith(FunctionKind.EVENT_DISTRIBUTION.value + "#")]
    rest = [a for a in roster if a not in registry and a not in brokers]
    return registry + brokers + rest


def _policy_pushes(
    policy_docs: list[dict[str, Any]], targets: list[str]
) -> list[dict[str, Any]]:
    steps: list[dict[str, Any]] = []
    for doc in sorted(policy_docs, key=lambda d: d.get("policy_id", "")):
        scope = set(Policy.from_dict(doc).scope)
        for agent in targets:
            if AgentId.parse(agent).kind in scope:
                steps.append(step("push-policy", AgentId.parse(agent), policy=doc))
    return steps


@register_cognition(FunctionKind.ORCHESTRATION.value, digest_keys=())
def orchestrator_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    op = request_op(inp)
    if op == "compose-chain":
        kinds = chain_closure([FunctionKind(k) for k in inp.body.get("kinds", [])])
        return CognitionOutcome(
            decision(
                responses=[{"chain": [k.value for k in kinds], "ctx": inp.body.get("ctx")}]
            ),
            1.0,
        )
    ev = event_of(inp)
    if ev is None:
        return CognitionOutcome(decision(), 1.0)
    topic, body = ev
    if topic == "control.bootstrap":
        phase = (body or {}).get("phase", "facts")
        if phase == "facts":
            return _bootstrap_facts(facts, inp)
        return _bootstrap_spawn(facts, inp)
    if topic == "hb":
        liveness = dict(facts.get("liveness", {}))
        if body["agent"] in liveness:
            liveness[body["agent"]] = body["tick"]
            return CognitionOutcome(decision(facts=[("liveness", liveness)]), 1.0)
        return CognitionOutcome(decision(), 1.0)
    if topic == "kp.digest":
        mirror = {a: dict(keys) for a, keys in facts.get("mirror", {}).items()}
        slot = mirror.setdefault(body["agent"], {})
        for key, doc in body["keys"].items():
            if key not in slot or doc["version"] >= slot[key]["version"]:
                slot[key] = doc
        return CognitionOutcome(decision(facts=[("mirror", mirror)]), 1.0)
    if topic == "events.tick":
        return _scan(facts, inp, body["tick"])
    return CognitionOutcome(decision(), 1.0)


def _bootstrap_facts(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    config = facts.get("config", {})
    me = str(inp.message.dst)
    roster = plan_roster(config)
    specs = build_specs(config, roster, facts.get("topology") or {}, me)
    events: list[dict[str, Any]] = []
    placement: dict[str, str] | None
    inventory = config.get("inventory") or {"node0": len(roster) + 1}
    try:
        placement = first_fit_decreasing(
            {a: 1 for a in roster + [me]}, inventory
        )
    except CapacityError as exc:
        placement = None
        events.append({"topic": "events.capacity", "body": {"error": str(exc)}})
    writes: list[tuple[str, Any]] = [
        ("roster", roster),
        ("specs", specs),
        ("placement", placement),
        ("liveness", {a: 0 for a in roster}),
        ("peers", sorted(roster + [me])),
        ("policy-docs", config.get("policies", [])),
    ]
    return CognitionOutcome(decision(facts=writes, events=events), 1.0)


def _bootstrap_spawn(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    if facts.get("placement") is None:
        return CognitionOutcome(
            decision(escalate={"reason": "no-placement"}), 1.0
        )
    roster = facts.get("roster", [])
    specs = facts.get("specs", {})
    placement = facts.get("placement", {})
    steps = [
        step(
            "spawn-agent",
            "host.control",
            agent=agent,
            spec=specs[agent],
            restore={},
            node=placement.get(agent),
        )
        for agent in _spawn_order(roster)
    ]
    steps.extend(bootstrap_steps(facts, inp))
    steps.extend(_policy_pushes(facts.get("policy-docs", []), roster))
    return CognitionOutcome(decision(plan=steps), 1.0)


def _scan(facts: dict[str, Any], inp: AgentInput, tick: int) -> CognitionOutcome:
    events = heartbeat(inp, tick)
    liveness = facts.get("liveness")
    if not liveness:
        return CognitionOutcome(decision(events=events), 1.0)
    deadline = HEARTBEAT_INTERVAL * MISSED_HEARTBEATS
    dead = sorted(a for a, last in liveness.items() if tick - last >= deadline)
    if not dead:
        return CognitionOutcome(decision(events=events), 1.0)

    specs = facts.get("specs", {})
    mirror = facts.get("mirror", {})
    placement = facts.get("placement") or {}
    broker_prefix = FunctionKind.EVENT_DISTRIBUTION.value + "#"
    dead_brokers = [a for a in dead if a.startswith(broker_prefix)]
    if dead_brokers:
        # The event plane itself is compromised; silence elsewhere is not
        # evidence of death. Replace the brokers, restart every clock.
        respawn = dead_brokers
        liveness = {a: tick for a in liveness}
    else:
        respawn = dead
        liveness = {**liveness, **{a: tick for a in dead}}
    steps = []
    for agent in respawn:
        if agent not in specs:
            continue
        restore = mirror.get(agent, {})
        if AgentId.parse(agent).kind is FunctionKind.KNOWLEDGE_PLANE:
            # the knowledge plane holds everyone's digests but exports none
            # of its own; re-seed it from this agent's mirror of the same
            restore = {"digests": {"value": mirror, "version": tick + 1, "updated_at": tick}}
        steps.append(
            step(
                "spawn-agent",
                "host.control",
                agent=agent,
                spec=specs[agent],
                restore=restore,
                node=placement.get(agent),
            )
        )
    steps.extend(_policy_pushes(facts.get("policy-docs", []), respawn))
    events.append(
        {"topic": "events.recovery", "body": {"respawned": respawn, "tick": tick}}
    )
    return CognitionOutcome(
        decision(plan=steps, facts=[("liveness", liveness)], events=events), 1.0
    )
