"""Cognition implementations for the SDN function agents.

Each agent wraps one pure decide function registered under its kind's name.
The decision logic itself (paths, classification, admission, rule building,
reroute planning) lives in logic.py and is shared verbatim with the
monolithic reference controller; what this module adds is the message
choreography: who asks whom, in which order, and what lands in facts.

The session agent is the conductor. A new flow triggers a four-step
conversation — classify, path, admit (realtime only), install — tracked in
its "pending" facts and correlated by a ctx token echoed through every
request and response. Conversations complete within the tick they start
because the fabric runs to quiescence; a pending entry that survives ticks
means its counterpart died, and is retried once the agent is respawned.

Ordering contract (mirrored by the oracle): link events precede packet-in
events within a tick, so reroute sweeps always run before new-flow
conversations, and requests reach the shared-state agents (QoS, forwarding)
in the same order in both controller modes.
"""

from __future__ import annotations

from typing import Any

from .core import AgentId, FunctionKind, MessageKind
from .logic import (
    ACTIVE,
    HEARTBEAT_INTERVAL,
    PENDING,
    PRIORITY_BY_CLASS,
    REALTIME,
    UNROUTABLE,
    UPDATING,
    admit_realtime,
    build_graph,
    classify,
    clearing_rules,
    flow_rate_milli,
    link_capacities,
    path_link_keys,
    plan_reroutes,
    release_reservation,
    rules_for_path,
    session_record,
    shortest_path,
)
from .netsim import link_key
from .runtime import AgentInput, CognitionOutcome, decision, register_cognition, step

# -- small shared helpers ------------------------------------------------------


def event_of(inp: AgentInput) -> tuple[str, Any] | None:
    """(topic, body) when the input is an event, direct or broker-wrapped."""
    if inp.message.kind is not MessageKind.EVENT or not isinstance(inp.body, dict):
        return None
    if "topic" not in inp.body:
        return None
    return inp.body["topic"], inp.body.get("body")


def request_op(inp: AgentInput) -> str | None:
    if inp.message.kind is MessageKind.REQUEST and isinstance(inp.body, dict):
        return inp.body.get("op")
    return None


def is_response(inp: AgentInput) -> bool:
    return inp.message.kind is MessageKind.RESPONSE and isinstance(inp.body, dict)


def self_id(inp: AgentInput) -> AgentId:
    dst = inp.message.dst
    if isinstance(dst, AgentId):
        return dst
    raise ValueError(f"agent input with non-agent destination {dst!r}")


def peer_of(facts: dict[str, Any], kind: FunctionKind) -> str | None:
    """Lowest-numbered known peer of a kind, as an id string."""
    prefix = kind.value + "#"
    hits = sorted(p for p in facts.get("peers", []) if p.startswith(prefix))
    return hits[0] if hits else None


def heartbeat(inp: AgentInput, tick: int) -> list[dict[str, Any]]:
    if tick % HEARTBEAT_INTERVAL != 0:
        return []
    return [{"topic": "hb", "body": {"agent": str(self_id(inp)), "tick": tick}}]


def bootstrap_steps(facts: dict[str, Any], inp: AgentInput) -> list[dict[str, Any]]:
    """Registration plus subscriptions: every agent's first plan."""
    me = self_id(inp)
    registry = facts.get("registry") or peer_of(facts, FunctionKind.REGISTRY)
    steps: list[dict[str, Any]] = []
    if registry is not None:
        steps.append(
            step(
                "register",
                AgentId.parse(registry),
                descriptor={
                    "agent": str(me),
                    "capabilities": sorted(facts.get("capabilities", [me.kind.value])),
                    "endpoint": str(me),
                    "lease_ttl": facts.get("lease-ttl", 40),
                },
            )
        )
    home = facts.get("home-broker")
    if home is not None:
        for flt in facts.get("subscriptions", []):
            steps.append(step("subscribe", AgentId.parse(home), filter=flt))
    return steps


def _set_link_state(links: list[dict[str, Any]], a: str, b: str, up: bool) -> list[dict[str, Any]]:
    key = link_key(a, b)
    return [
        {**l, "up": up} if link_key(l["a"], l["b"]) == key else l for l in links
    ]


def topology_ingest(facts: dict[str, Any], inp: AgentInput) -> list[tuple[str, Any]]:
    """Keep a local topology view current from link events and refreshes."""
    ev = event_of(inp)
    if ev is None:
        return []
    topic, body = ev
    view = facts.get("topology")
    if view is None:
        return []
    if topic == "events.link":
        links = _set_link_state(view["links"], body["a"], body["b"], body["state"] == "up")
        return [("topology", {**view, "links": links})]
    if topic == "events.linkstate":
        return [("topology", {**view, "links": body["links"]})]
    if topic == "facts.topology":
        return [("topology", body["view"])]
    return []


# -- topology agent -------------------------------------------------------------


@register_cognition(
    FunctionKind.TOPOLOGY.value, ingest=topology_ingest, digest_keys=("topology",)
)
def topology_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    """Owns the canonical network view and rebroadcasts it on every change."""
    ev = event_of(inp)
    if ev is None:
        return CognitionOutcome(decision(), 1.0)
    topic, body = ev
    events: list[dict[str, Any]] = []
    if topic in ("events.link", "events.linkstate"):
        events.append({"topic": "facts.topology", "body": {"view": facts["topology"]}})
    elif topic == "events.tick":
        events.extend(heartbeat(inp, body["tick"]))
    elif topic == "control.bootstrap":
        return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(events=events), 1.0)


# -- routing agent ----------------------------------------------------------------


@register_cognition(
    FunctionKind.ROUTING.value, ingest=topology_ingest, digest_keys=("topology",)
)
def routing_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    op = request_op(inp)
    if op == "path":
        view = facts.get("topology")
        if view is None:
            return CognitionOutcome(
                decision(escalate={"reason": "no-topology", "op": "path"}), 1.0
            )
        graph = build_graph(view["links"])
        src_sw = view["hosts"].get(inp.body["src"])
        dst_sw = view["hosts"].get(inp.body["dst"])
        path = (
            shortest_path(graph, src_sw, dst_sw)
            if src_sw is not None and dst_sw is not None
            else None
        )
        return CognitionOutcome(
            decision(responses=[{"path": path, "ctx": inp.body.get("ctx")}]), 1.0
        )
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "events.tick":
            return CognitionOutcome(decision(events=heartbeat(inp, body["tick"])), 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


# -- classifier agent ----------------------------------------------------------------


@register_cognition(FunctionKind.CLASSIFIER.value)
def classifier_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    op = request_op(inp)
    if op == "classify":
        thresholds = facts.get("thresholds", {})
        klass = classify(
            size=inp.body["size"],
            gap=inp.body["gap"],
            hint=inp.body.get("hint"),
            size_threshold=thresholds.get("size", 100),
            gap_threshold=thresholds.get("gap", 3),
        )
        return CognitionOutcome(
            decision(responses=[{"class": klass, "ctx": inp.body.get("ctx")}]), 1.0
        )
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "events.tick":
            return CognitionOutcome(decision(events=heartbeat(inp, body["tick"])), 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


# -- QoS agent -----------------------------------------------------------------------


@register_cognition(
    FunctionKind.QOS.value,
    ingest=topology_ingest,
    digest_keys=("topology", "reservations", "admitted"),
)
def qos_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    """Admission control: realtime sessions reserve bandwidth on every path
    link, denied when any link would exceed the configured share. Admissions
    are keyed by ctx so retried requests cannot double-reserve."""
    op = request_op(inp)
    if op == "admit":
        ctx = inp.body.get("ctx")
        admitted = facts.get("admitted", {})
        if ctx in admitted:
            return CognitionOutcome(decision(responses=[{"admitted": True, "ctx": ctx}]), 1.0)
        if inp.body.get("class") != REALTIME:
            return CognitionOutcome(decision(responses=[{"admitted": True, "ctx": ctx}]), 1.0)
        view = facts.get("topology")
        if view is None:
            return CognitionOutcome(
                decision(escalate={"reason": "no-topology", "op": "admit"}), 1.0
            )
        rate = flow_rate_milli(inp.body["gap"])
        keys = path_link_keys(inp.body["path"])
        ok, reservations = admit_realtime(
            facts.get("reservations", {}),
            keys,
            rate,
            link_capacities(view["links"]),
            facts.get("qos-cap-permille", 800),
        )
        writes: list[tuple[str, Any]] = []
        if ok:
            writes = [
                ("reservations", reservations),
                ("admitted", {**admitted, ctx: {"links": keys, "rate": rate}}),
            ]
        return CognitionOutcome(
            decision(responses=[{"admitted": ok, "ctx": ctx}], facts=writes), 1.0
        )
    if op == "release":
        ctx = inp.body.get("ctx")
        admitted = dict(facts.get("admitted", {}))
        grant = admitted.pop(ctx, None)
        writes = []
        if grant is not None:
            writes = [
                (
                    "reservations",
                    release_reservation(
                        facts.get("reservations", {}), grant["links"], grant["rate"]
                    ),
                ),
                ("admitted", admitted),
            ]
        return CognitionOutcome(
            decision(responses=[{"released": grant is not None, "ctx": ctx}], facts=writes),
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


# -- forwarding agent -----------------------------------------------------------------


@register_cognition(
    FunctionKind.FORWARDING.value,
    ingest=topology_ingest,
    digest_keys=("topology", "switch-rules"),
)
def forwarding_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    """Turns rule sets into per-switch install/remove plans. The plan is
    where policy caps bite: a failed validation emits a violation event
    instead of touching any switch, and the ok response never goes out."""
    op = request_op(inp)
    if op == "install":
        ctx = inp.body.get("ctx")
        plan = [
            step("install-rule", switch, rule=doc, ctx=ctx)
            for switch, doc in inp.body["rules"]
        ]
        table = {sw: dict(rules) for sw, rules in facts.get("switch-rules", {}).items()}
        for switch, doc in inp.body["rules"]:
            slot = f"{doc['match']['src']}|{doc['match']['dst']}|{doc['priority']}"
            table.setdefault(switch, {})[slot] = doc["rule_id"]
        return CognitionOutcome(
            decision(
                plan=plan,
                responses=[{"ok": True, "installed": len(plan), "ctx": ctx}],
                facts=[("switch-rules", table)],
            ),
            1.0,
        )
    if op == "remove":
        ctx = inp.body.get("ctx")
        plan = [
            step("remove-rule", switch, rule=doc, ctx=ctx)
            for switch, doc in inp.body["rules"]
        ]
        table = {sw: dict(rules) for sw, rules in facts.get("switch-rules", {}).items()}
        for switch, doc in inp.body["rules"]:
            slot = f"{doc['match']['src']}|{doc['match']['dst']}|{doc['priority']}"
            table.get(switch, {}).pop(slot, None)
        return CognitionOutcome(
            decision(
                plan=plan,
                responses=[{"ok": True, "removed": len(plan), "ctx": ctx}],
                facts=[("switch-rules", table)],
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


# -- monitoring agent ------------------------------------------------------------------


def monitoring_ingest(facts: dict[str, Any], inp: AgentInput) -> list[tuple[str, Any]]:
    ev = event_of(inp)
    if ev is None or ev[0] != "events.stats":
        return []
    load = {k: list(v) for k, v in facts.get("load", {}).items()}
    for a, b, nbytes, drops in ev[1]["links"]:
        key = f"{a}|{b}"
        cur = load.get(key, [0, 0])
        load[key] = [cur[0] + nbytes, cur[1] + drops]
    return [("load", load)]


@register_cognition(FunctionKind.MONITORING.value, ingest=monitoring_ingest)
def monitoring_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "events.tick":
            return CognitionOutcome(decision(events=heartbeat(inp, body["tick"])), 1.0)
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
    return CognitionOutcome(decision(), 1.0)


# -- session agent --------------------------------------------------------------------

_SESSION_DIGEST = (
    "topology",
    "sessions",
    "pending",
    "session-seq",
    "rule-seq",
    "schedule",
)

RETRY_AFTER = 2  # ticks a conversation may stall before re-asking


class _SessionState:
    """Mutable working copy of the session agent's facts for one decision."""

    def __init__(self, facts: dict[str, Any]):
        self.facts = facts
        self.sessions = {k: dict(v) for k, v in facts.get("sessions", {}).items()}
        self.pending = {k: dict(v) for k, v in facts.get("pending", {}).items()}
        self.session_seq = facts.get("session-seq", 0)
        self.rule_seq = facts.get("rule-seq", 0)
        self.steps: list[dict[str, Any]] = []
        self.now = 0

    def writes(self) -> list[tuple[str, Any]]:
        return [
            ("sessions", self.sessions),
            ("pending", self.pending),
            ("session-seq", self.session_seq),
            ("rule-seq", self.rule_seq),
        ]

    # -- conversation steps --------------------------------------------------

    def _ask(self, kind: FunctionKind, op: str, **body: Any) -> None:
        target = peer_of(self.facts, kind)
        if target is not None:
            self.steps.append(step(op, AgentId.parse(target), **body))

    def _ask_remove(self, sid: str, path: list[str], klass: str) -> None:
        self._ask(
            FunctionKind.FORWARDING,
            "remove",
            rules=[
                [sw, doc]
                for sw, doc in clearing_rules(
                    path,
                    self.sessions[sid]["src"],
                    self.sessions[sid]["dst"],
                    PRIORITY_BY_CLASS[klass],
                )
            ],
            ctx=sid,
        )

    def find_session(self, src: str, dst: str) -> str | None:
        for sid in sorted(self.sessions):
            rec = self.sessions[sid]
            if rec["src"] == src and rec["dst"] == dst:
                return sid
        return None

    def open_session(self, src: str, dst: str, size: int, gap: int, hint: str | None) -> None:
        self.session_seq += 1
        sid = f"s{self.session_seq:04d}"
        self.sessions[sid] = session_record(
            sid, src, dst, klass="", created_at=self.now, state=PENDING, gap=gap, size=size
        )
        self.pending[sid] = {
            "sid": sid,
            "stage": "classify",
            "src": src,
            "dst": dst,
            "size": size,
            "gap": gap,
            "hint": hint,
            "asked_at": self.now,
        }
        self._ask(
            FunctionKind.CLASSIFIER, "classify", size=size, gap=gap, hint=hint, ctx=sid
        )

    def reissue(self, sid: str) -> None:
        """Re-send the current stage's request for a stalled conversation."""
        p = self.pending[sid]
        p["asked_at"] = self.now
        stage = p["stage"]
        if p.get("cleanup") and stage in ("admit", "install"):
            # the original remove may have died with its target; removal is
            # idempotent, so repeat it ahead of the (re)install
            self._ask_remove(sid, p["cleanup"], p["class"])
        if stage == "classify":
            self._ask(
                FunctionKind.CLASSIFIER,
                "classify",
                size=p["size"],
                gap=p["gap"],
                hint=p["hint"],
                ctx=sid,
            )
        elif stage == "path":
            self._ask(FunctionKind.ROUTING, "path", src=p["src"], dst=p["dst"], ctx=sid)
        elif stage == "admit":
            self._ask(
                FunctionKind.QOS,
                "admit",
                path=p["path"],
                gap=p["gap"],
                ctx=sid,
                **{"class": p["class"]},
            )
        elif stage == "install":
            self._install(sid, fresh_ids=False)

    def on_response(self, body: dict[str, Any]) -> None:
        ctx = body.get("ctx")
        p = self.pending.get(ctx)
        if p is None:
            return
        stage = p["stage"]
        if stage == "classify" and "class" in body:
            p["class"] = body["class"]
            self.sessions[ctx]["class"] = body["class"]
            p["stage"] = "path"
            p["asked_at"] = self.now
            self._ask(FunctionKind.ROUTING, "path", src=p["src"], dst=p["dst"], ctx=ctx)
        elif stage == "path" and "path" in body:
            if body["path"] is None:
                self.finalize(ctx, UNROUTABLE, reason="no-path")
                return
            p["path"] = body["path"]
            p["asked_at"] = self.now
            if p["class"] == REALTIME:
                p["stage"] = "admit"
                self._ask(
                    FunctionKind.QOS,
                    "admit",
                    path=p["path"],
                    gap=p["gap"],
                    ctx=ctx,
                    **{"class": p["class"]},
                )
            else:
                p["stage"] = "install"
                self._install(ctx)
        elif stage == "admit" and "admitted" in body:
            if not body["admitted"]:
                self.finalize(ctx, UNROUTABLE, reason="qos-denied")
                return
            p["reserved"] = True
            p["stage"] = "install"
            p["asked_at"] = self.now
            self._install(ctx)
        elif stage == "install" and "installed" in body:
            rec = self.sessions[ctx]
            rec["state"] = ACTIVE
            rec["path"] = p["path"]
            rec["reserved"] = p.get("reserved", False)
            del self.pending[ctx]

    def _install(self, sid: str, fresh_ids: bool = True) -> None:
        p = self.pending[sid]
        if fresh_ids:
            ids = [f"r{self.rule_seq + i + 1:04d}" for i in range(len(p["path"]))]
            self.rule_seq += len(ids)
            p["rule_ids"] = ids
        rules = rules_for_path(
            p["path"], p["src"], p["dst"], PRIORITY_BY_CLASS[p["class"]], p["rule_ids"]
        )
        self._ask(
            FunctionKind.FORWARDING,
            "install",
            rules=[[sw, doc] for sw, doc in rules],
            ctx=sid,
        )

    def finalize(self, sid: str, state: str, reason: str | None = None) -> None:
        rec = self.sessions[sid]
        rec["state"] = state
        rec["reason"] = reason
        p = self.pending.pop(sid, None)
        if p and p.get("reserved"):
            self._ask(FunctionKind.QOS, "release", ctx=sid)
            rec["reserved"] = False

    # -- topology reactions -----------------------------------------------------

    def sweep(self, view: dict[str, Any]) -> None:
        """Repair sessions after a topology change; order is sid order, the
        same order the oracle applies."""
        graph = build_graph(view["links"])
        moves = plan_reroutes(self.sessions, graph, view["hosts"])
        for sid, path in moves:
            rec = self.sessions[sid]
            old = rec.get("path")
            if old:
                self._ask_remove(sid, old, rec["class"])
            if path is None:
                if rec.get("reserved"):
                    self._ask(FunctionKind.QOS, "release", ctx=sid)
                    rec["reserved"] = False
                rec["state"] = UNROUTABLE
                rec["reason"] = "no-path"
                rec["path"] = None
                continue
            if rec.get("reserved"):
                self._ask(FunctionKind.QOS, "release", ctx=sid)
                rec["reserved"] = False
            rec["state"] = UPDATING
            rec["reason"] = None
            self.pending[sid] = {
                "sid": sid,
                "stage": "admit" if rec["class"] == REALTIME else "install",
                "src": rec["src"],
                "dst": rec["dst"],
                "size": rec["size"],
                "gap": rec["gap"],
                "hint": None,
                "class": rec["class"],
                "path": path,
                "cleanup": old,
                "asked_at": self.now,
            }
            if rec["class"] == REALTIME:
                self._ask(
                    FunctionKind.QOS,
                    "admit",
                    path=path,
                    gap=rec["gap"],
                    ctx=sid,
                    **{"class": rec["class"]},
                )
            else:
                self._install(sid)

    def on_violation(self, body: dict[str, Any]) -> None:
        ctxs = sorted(
            {
                s["params"]["ctx"]
                for s in body.get("steps", [])
                if isinstance(s.get("params"), dict) and "ctx" in s["params"]
            }
        )
        for ctx in ctxs:
            if ctx in self.pending:
                self.finalize(ctx, UNROUTABLE, reason="policy-denied")

    def proactive_scan(self, tick: int, schedule: list[dict[str, Any]]) -> None:
        """Open conversations one tick ahead of declared flows so their rules
        are effective exactly when the first unit arrives."""
        for flow in schedule:
            if flow["start_tick"] != tick + 1:
                continue
            if self.find_session(flow["src"], flow["dst"]) is not None:
                continue
            self.open_session(
                flow["src"], flow["dst"], flow["size"], flow.get("gap", 1), flow.get("class")
            )

    def retries(self, tick: int) -> None:
        for sid in sorted(self.pending):
            if tick - self.pending[sid].get("asked_at", tick) >= RETRY_AFTER:
                self.reissue(sid)


@register_cognition(
    FunctionKind.SESSION.value, ingest=topology_ingest, digest_keys=_SESSION_DIGEST
)
def session_decide(facts: dict[str, Any], inp: AgentInput) -> CognitionOutcome:
    st = _SessionState(facts)
    st.now = inp.message.sim_time
    events: list[dict[str, Any]] = []

    if is_response(inp):
        st.on_response(inp.body)
        return CognitionOutcome(decision(plan=st.steps, facts=st.writes()), 1.0)

    ev = event_of(inp)
    if ev is not None:
        topic, body = ev
        if topic == "control.bootstrap":
            return CognitionOutcome(decision(plan=bootstrap_steps(facts, inp)), 1.0)
        if topic == "events.packet_in":
            sid = st.find_session(body["src"], body["dst"])
            if sid is None:
                st.open_session(
                    body["src"], body["dst"], body["size"], body["gap"], body.get("hint")
                )
            elif st.sessions[sid]["state"] == ACTIVE and sid not in st.pending:
                # rules the fabric believes in are missing on the floor:
                # re-run the install leg with the session's known path
                rec = st.sessions[sid]
                st.pending[sid] = {
                    "sid": sid,
                    "stage": "install",
                    "src": rec["src"],
                    "dst": rec["dst"],
                    "size": rec["size"],
                    "gap": rec["gap"],
                    "hint": None,
                    "class": rec["class"],
                    "path": rec["path"],
                    "asked_at": st.now,
                }
                st._install(sid)
        elif topic in ("events.link", "events.linkstate", "facts.topology"):
            st.sweep(facts["topology"])  # ingest already applied the change
        elif topic == "events.violation":
            st.on_violation(body)
        elif topic == "events.tick":
            tick = body["tick"]
            events.extend(heartbeat(inp, tick))
            if facts.get("proactive"):
                st.proactive_scan(tick, facts.get("schedule", []))
            st.retries(tick)
    return CognitionOutcome(decision(plan=st.steps, facts=st.writes(), events=events), 1.0)
