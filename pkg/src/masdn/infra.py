"""Cognition implementations for the infrastructure agents: the service
registry facade, the event-distribution brokers, the knowledge plane, the
fault handler, and the discovery directory.

The registry agent keeps the whole lease table in its facts and manipulates
it with the pure table functions from registry.py, so its state digests
into the knowledge plane like any other agent's and survives a respawn.

Brokers carry the event plane at run time. A published event (a message
whose destination is a topic) reaches one broker, which wraps it in an
envelope stamped with the publisher and the publish msg_id, delivers it to
local subscribers, and forwards it according to the configured arrangement
(solo, full mesh, or per-level with a root relay). Because the fabric is
FIFO and msg_ids are globally increasing, a per-publisher high-water mark
is enough to drop forwarded echoes and injected duplicates.
"""

from __future__ import annotations

from typing import Any

from .core import AgentId, FunctionKind, MessageKind
from .events import match_topic
from .functions import bootstrap_steps, event_of, heartbeat, request_op
from .logic import HEARTBEAT_INTERVAL
from .registry import (
    UnknownLease,
    table_deregister,
    table_discover,
    table_expire,
    table_heartbeat,
    table_register,
)
from .runtime import AgentInput, CognitionOutcome, decision, register_cognition, step

DEFAULT_LEASE_TTL = 40  # ticks; long enough to ride out a registry respawn


# -- service registry -----------------------------------------------------------


@register_cognition(
    FunctionKind.REGISTRY.value, digest_keys=("leases",)
)
def registry_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    now = inp.message.sim_time
    leases = facts.get("leases", {})
    op = request_op(inp)
    if op == "register":
        doc = inp.body["descriptor"]
        new = table_register(leases, doc, now)
        return CognitionOutcome(
            decision(
                responses=[{"ok": True, "expires_at": new[doc["agent"]]["expires_at"]}],
                facts=[("leases", new)],
                events=[_changed_event(new, now)],
            ),
            1.0,
        )
    if op == "deregister":
        agent = inp.body["agent"]
        try:
            new = table_deregister(leases, agent)
        except UnknownLease:
            return CognitionOutcome(decision(responses=[{"ok": False}]), 1.0)
        return CognitionOutcome(
            decision(
                responses=[{"ok": True}],
                facts=[("leases", new)],
                events=[_changed_event(new, now)],
            ),
            1.0,
        )
    if op == "discover":
        kind = FunctionKind(inp.body["kind"]) if inp.body.get("kind") else None
        hits = table_discover(leases, now, kind=kind, capability=inp.body.get("capability"))
        return CognitionOutcome(
            decision(responses=[{"agents": hits, "ctx": inp.body.get("ctx")}]), 1.0
        )
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "hb":
            try:
                new = table_heartbeat(leases, body["agent"], now)
            except UnknownLease:
                return CognitionOutcome(decision(), 1.0)
            return CognitionOutcome(decision(facts=[("leases", new)]), 1.0)
        if topic == "events.tick":
            new, dead = table_expire(leases, now)
            out = decision(events=list(heartbeat(inp, body["tick"])))
            if dead:
                out.setdefault("events", []).append(_changed_event(new, now))
                out["facts"] = [("leases", new)]
            return CognitionOutcome(out, 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


def _changed_event(leases: dict[str, Any], now: int) -> dict[str, Any]:
    return {
        "topic": "registry.changed",
        "body": {"live": sorted(a for a, e in leases.items() if e["expires_at"] > now)},
    }


# -- discovery directory -----------------------------------------------------------


def _autoconf_ingest(facts: dict[str, Any], inp: AgentInput) -> list[tuple[str, Any]]:
    ev = event_of(inp)
    if ev is None or ev[0] != "registry.changed":
        return []
    directory: dict[str, list[str]] = {}
    for agent in ev[1]["live"]:
        directory.setdefault(agent.split("#", 1)[0], []).append(agent)
    return [("directory", directory)]


@register_cognition(
    FunctionKind.AUTOCONF_DISCOVERY.value,
    ingest=_autoconf_ingest,
    digest_keys=("directory",),
)
def autoconf_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    op = request_op(inp)
    if op == "lookup":
        directory = facts.get("directory", {})
        return CognitionOutcome(
            decision(
                responses=[
                    {
                        "agents": directory.get(inp.body["kind"], []),
                        "ctx": inp.body.get("ctx"),
                    }
                ]
            ),
            1.0,
        )
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "events.tick":
            return CognitionOutcome(decision(events=heartbeat(inp, body["tick"])), 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


# -- fault handler -------------------------------------------------------------------


@register_cognition(FunctionKind.FAULT.value, digest_keys=("incidents",))
def fault_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    """Receives escalations from below and keeps the incident record."""
    op = request_op(inp)
    if op == "escalate":
        incidents = list(facts.get("incidents", []))
        incidents.append(
            {
                "source": inp.body.get("source"),
                "issue": inp.body.get("issue"),
                "at": inp.message.sim_time,
            }
        )
        return CognitionOutcome(
            decision(
                facts=[("incidents", incidents)],
                events=[
                    {
                        "topic": "events.incident",
                        "body": {"source": inp.body.get("source"), "issue": inp.body.get("issue")},
                    }
                ],
            ),
            1.0,
        )
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "events.tick":
            return CognitionOutcome(decision(events=heartbeat(inp, body["tick"])), 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


# -- knowledge plane --------------------------------------------------------------------


def _kp_ingest(facts: dict[str, Any], inp: AgentInput) -> list[tuple[str, Any]]:
    ev = event_of(inp)
    if ev is None or ev[0] != "kp.digest":
        return []
    body = ev[1]
    digests = {a: dict(keys) for a, keys in facts.get("digests", {}).items()}
    slot = digests.setdefault(body["agent"], {})
    for key, doc in body["keys"].items():
        if key not in slot or doc["version"] >= slot[key]["version"]:
            slot[key] = doc
    return [("digests", digests)]


@register_cognition(FunctionKind.KNOWLEDGE_PLANE.value, ingest=_kp_ingest)
def knowledge_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    op = request_op(inp)
    if op == "view":
        return CognitionOutcome(
            decision(responses=[{"digests": facts.get("digests", {}), "ctx": inp.body.get("ctx")}]),
            1.0,
        )
    if op == "restore-for":
        keys = facts.get("digests", {}).get(inp.body["agent"], {})
        return CognitionOutcome(
            decision(responses=[{"agent": inp.body["agent"], "keys": keys, "ctx": inp.body.get("ctx")}]),
            1.0,
        )
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "events.tick":
            return CognitionOutcome(decision(events=heartbeat(inp, body["tick"])), 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


# -- event-distribution broker ------------------------------------------------------------


def _envelope_steps(
    facts: dict[str, Any], env: dict[str, Any]
) -> tuple[list[dict[str, Any]], list[tuple[str, Any]]]:
    """Local deliveries plus high-water bookkeeping for one envelope."""
    hw = dict(facts.get("high-water", {}))
    last = hw.get(env["publisher"], 0)
    if env["pub_msg_id"] <= last:
        return [], []  # echo of something already handled
    hw[env["publisher"]] = env["pub_msg_id"]
    subs = facts.get("subs", {})
    targets: set[str] = set()
    for flt, group in subs.items():
        if match_topic(flt, env["topic"]):
            targets.update(group)
    steps = [
        step("deliver-event", AgentId.parse(t), event=env) for t in sorted(targets)
    ]
    return steps, [("high-water", hw)]


@register_cognition(
    FunctionKind.EVENT_DISTRIBUTION.value,
    digest_keys=("subs", "peers", "high-water"),
)
def broker_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    op = request_op(inp)
    if op == "subscribe":
        sub = str(inp.message.src)
        subs = {f: sorted(set(g)) for f, g in facts.get("subs", {}).items()}
        group = set(subs.get(inp.body["filter"], []))
        group.add(sub)
        subs[inp.body["filter"]] = sorted(group)
        peers = sorted(set(facts.get("peers", [])) | {sub})
        return CognitionOutcome(
            decision(facts=[("subs", subs), ("peers", peers)]), 1.0
        )
    if op == "unsubscribe":
        sub = str(inp.message.src)
        subs = {f: sorted(set(g)) for f, g in facts.get("subs", {}).items()}
        group = set(subs.get(inp.body["filter"], []))
        group.discard(sub)
        if group:
            subs[inp.body["filter"]] = sorted(group)
        else:
            subs.pop(inp.body["filter"], None)
        return CognitionOutcome(decision(facts=[("subs", subs)]), 1.0)

    if inp.message.kind is MessageKind.EVENT and isinstance(inp.body, dict):
        forwarded = "publisher" in inp.body
        if forwarded:
            env = inp.body
        else:
            env = {
                "topic": inp.body["topic"],
                "body": inp.body.get("body"),
                "publisher": str(inp.message.src),
                "pub_msg_id": inp.message.msg_id,
            }
        steps, writes = _envelope_steps(facts, env)
        if not steps and not writes:
            return CognitionOutcome(decision(), 1.0)  # duplicate
        role = facts.get("role", "solo")
        if not forwarded:
            if role == "mesh":
                for peer in facts.get("brokers", []):
                    steps.append(step("forward-event", AgentId.parse(peer), event=env))
            elif role == "level" and facts.get("root"):
                steps.append(step("forward-event", AgentId.parse(facts["root"]), event=env))
        if role == "root":
            # Relay to every level broker; the originating broker drops the
            # echo via its high-water mark.
            for peer in facts.get("downstream", []):
                steps.append(step("forward-event", AgentId.parse(peer), event=env))
        events = []
        if env["topic"] == "events.tick":
            # dst here is the topic, not this broker, so self_id() cannot help
            tick = env["body"]["tick"]
            me = facts.get("self")
            if me and tick % HEARTBEAT_INTERVAL == 0:
                events = [{"topic": "hb", "body": {"agent": me, "tick": tick}}]
        return CognitionOutcome(decision(plan=steps, facts=writes, events=events), 1.0)

    ev = event_of(inp)
    if ev is not None and ev[0] == "control.bootstrap":
        return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)
