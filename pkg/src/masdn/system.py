"""Whole-system assembly: simulator + fabric + agents, stepped in lockstep.

The control plane is instantaneous relative to the data plane: within a
tick the fabric runs to quiescence, so every conversation triggered by an
event finishes before the next tick's packets move. Per tick the bridge
publishes, in order: link failures, packet-ins, link load stats, a full
link-state refresh every REFRESH_EVERY ticks, and finally the tick event
itself — so reroute sweeps always run before new-flow setups, mirroring
the reference controller's processing order.

The host-control endpoint gives the orchestrator its lifecycle lever:
spawn-agent requests (re)create an agent, seed it with restored knowledge
and hand it a bootstrap event. The switch.* prefix endpoint is the
southbound interface; rules installed through it take effect next tick.

Two small services run outside any agent because something must survive
when agents die: the digest pump, which exports changed facts of every
live agent to the knowledge plane after each tick, and the watchdog, which
hands the tick event straight to the orchestrator while any broker is down
(without it, a dead event plane could never be noticed, let alone fixed).
"""

from __future__ import annotations

from typing import Any, Callable

from .core import AgentId, FunctionKind, Message, MessageKind
from .logic import topology_view
from .netsim import (
    SUPPRESS_TICKS,
    LinkDown,
    PacketIn,
    Scenario,
    Simulator,
    TickStats,
    Topology,
)
from .orchestrator import _SUBSCRIPTIONS, broker_ids, home_broker
from .pps import DEFAULT_PROFILES, StackProfile, decode_body, encode_body
from .runtime import AgentHost, AgentSpec
from .bus import Bus

REFRESH_EVERY = 10  # ticks between full link-state refresh events

_PROFILE_BY_ID = {p.profile_id: p for p in DEFAULT_PROFILES}

_ADAPTER = FunctionKind.SWITCH_ADAPTER


def resolve_profiles(ids: list[str] | None) -> tuple[StackProfile, ...]:
    if not ids:
        return DEFAULT_PROFILES
    return tuple(_PROFILE_BY_ID[i] for i in ids)


class AgentSystem:
    """One multi-agent controller run over one simulated network."""

    def __init__(
        self,
        topo: Topology,
        scenario: Scenario,
        config: dict[str, Any] | None = None,
        log_sink: Callable[[dict[str, Any]], None] | None = None,
    ) -> None:
        self.topo = topo
        self.scenario = scenario
        self.config = dict(config or {})
        self.host = AgentHost(log_sink=log_sink)
        self.bus = Bus(self.host, default_profiles=resolve_profiles(self.config.get("profiles")))
        self.sim = Simulator(
            topo, scenario, suppress_ticks=self.config.get("suppress_ticks", SUPPRESS_TICKS)
        )
        self.strategy = self.config.get("event_strategy", "centralized")
        self.orch = AgentId(FunctionKind.ORCHESTRATION, 0)
        self.stats: list[TickStats] = []
        # fault injection: tick -> agent ids to kill after that tick completes
        self.kill_schedule: dict[int, list[str]] = {
            int(t): list(agents) for t, agents in self.config.get("kills", {}).items()
        }
        self._exported: dict[tuple[str, str], int] = {}
        # every spawn the control endpoint performs, (agent, tick); replacements
        # show up as a second entry for the same agent
        self.spawn_log: list[tuple[str, int]] = []

        self.bus.bind_endpoint("host.control", self._control)
        self.bus.bind_prefix("switch.", self._switch)
        self.bus.topic_router = self._route_topic
        self.host.on_spawn = self._forget_exports

        # declared arrivals, realized post-jitter: what proactive mode pre-installs
        self.config.setdefault(
            "schedule",
            [
                {
                    "src": p.flow.src,
                    "dst": p.flow.dst,
                    "size": p.flow.size,
                    "gap": p.flow.gap,
                    "start_tick": p.flow.start,
                    "class": p.flow.hint,
                }
                for p in self.sim.flows
            ],
        )

    # -- endpoints ------------------------------------------------------------

    def _route_topic(self, msg: Message) -> AgentId | None:
        return AgentId.parse(home_broker(self.strategy, str(msg.src)))

    def _control(self, msg: Message) -> list[Message]:
        body = decode_body(msg.payload)
        if not isinstance(body, dict):
            return []
        if body.get("op") == "spawn-agent":
            return self._spawn(msg, body)
        if body.get("op") == "despawn-agent":
            agent = AgentId.parse(body["agent"])
            if agent in self.host.agents:
                self.host.kill_agent(agent)
        return []

    def _spawn(self, msg: Message, body: dict[str, Any]) -> list[Message]:
        doc = body["spec"]
        agent = AgentId.parse(doc["agent"])
        self.spawn_log.append((str(agent), self.host.now))
        if agent in self.host.agents:  # replacement, not a duplicate
            self.host.kill_agent(agent)
        initial = doc.get("initial_facts", {})
        spec = AgentSpec(
            agent=agent,
            cognition=doc["cognition"],
            initial_facts=initial,
            subscriptions=tuple(initial.get("subscriptions", ())),
            profiles=resolve_profiles(doc.get("profiles")),
        )
        self.host.spawn_agent(spec)
        restore = body.get("restore") or {}
        if restore:
            self.host.get(agent).facts.restore(restore)
        return [
            self.host.factory.new_message(
                src=msg.src if isinstance(msg.src, AgentId) else self.orch,
                dst=agent,
                kind=MessageKind.EVENT,
                payload=encode_body({"topic": "control.bootstrap", "body": {"phase": "run"}}),
                now=self.host.now,
            )
        ]

    def _switch(self, msg: Message) -> list[Message]:
        body = decode_body(msg.payload)
        if not isinstance(body, dict):
            return []
        switch = str(msg.dst)[len("switch.") :]
        rule = body.get("rule", {})
        if body.get("op") == "install-rule":
            self.sim.install_rule(switch, rule, now=self.host.now)
        elif body.get("op") == "remove-rule":
            match = rule.get("match", {})
            self.sim.remove_rule(switch, match.get("src"), match.get("dst"), rule.get("priority"))
        return []

    def _forget_exports(self, agent: Any) -> None:
        me = str(agent.id)
        for key in [k for k in self._exported if k[0] == me]:
            del self._exported[key]

    # -- lifecycle ------------------------------------------------------------

    def genesis(self) -> None:
        """Spawn the orchestrator and let it recompose the whole controller."""
        subs = list(_SUBSCRIPTIONS[FunctionKind.ORCHESTRATION])
        facts = {
            "config": self.config,
            "topology": topology_view(self.topo, self.sim.links_doc()),
            "endpoints": ["host.control"],
            "home-broker": home_broker(self.strategy, str(self.orch)),
            "registry": str(AgentId(FunctionKind.REGISTRY, 0)),
            "subscriptions": subs,
            "lease-ttl": self.config.get("lease_ttl", 40),
        }
        self.host.spawn_agent(
            AgentSpec(
                agent=self.orch,
                cognition=FunctionKind.ORCHESTRATION.value,
                initial_facts=facts,
                subscriptions=tuple(subs),
                profiles=resolve_profiles(self.config.get("profiles")),
            )
        )
        for phase in ("facts", "spawn"):
            self.bus.send(self._bootstrap_msg(phase))
        self.bus.run_to_quiescence()

    def _bootstrap_msg(self, phase: str) -> Message:
        return self.host.factory.new_message(
            src=self.orch,
            dst=self.orch,
            kind=MessageKind.EVENT,
            payload=encode_body({"topic": "control.bootstrap", "body": {"phase": phase}}),
            now=self.host.now,
        )

    # -- stepping ------------------------------------------------------------

    def tick(self, t: int) -> None:
        self.host.now = t
        events = self.sim.step(t)
        pubs: list[Message] = []
        for ev in events:
            if isinstance(ev, LinkDown):
                pubs.append(self._publish(0, "events.link", ev.to_doc()))
            elif isinstance(ev, PacketIn):
                idx = self.topo.switches.index(ev.switch)
                pubs.append(self._publish(idx, "events.packet_in", ev.to_doc()))
            else:
                self.stats.append(ev)
                pubs.append(self._publish(0, "events.stats", ev.to_doc()))
        if t % REFRESH_EVERY == 0:
            pubs.append(self._publish(0, "events.linkstate", {"links": self.sim.links_doc()}))
        pubs.append(self._publish(0, "events.tick", {"tick": t}))
        if any(AgentId.parse(b) not in self.host.agents for b in broker_ids(self.strategy)):
            # watchdog: the event plane is (partly) down, hand the tick to the
            # orchestrator directly so recovery can still run
            pubs.append(
                self.host.factory.new_message(
                    src=AgentId(_ADAPTER, 0),
                    dst=self.orch,
                    kind=MessageKind.EVENT,
                    payload=encode_body({"topic": "events.tick", "body": {"tick": t}}),
                    now=t,
                )
            )
        self.bus.send(pubs)
        self.bus.run_to_quiescence()
        self._pump_digests(t)
        for target in self.kill_schedule.get(t, ()):
            aid = AgentId.parse(target)
            if aid in self.host.agents:
                self.host.kill_agent(aid)

    def _publish(self, adapter: int, topic: str, body: Any) -> Message:
        return self.host.factory.new_message(
            src=AgentId(_ADAPTER, adapter),
            dst=topic,
            kind=MessageKind.EVENT,
            payload=encode_body({"topic": topic, "body": body}),
            now=self.host.now,
        )

    def _pump_digests(self, t: int) -> None:
        """Ship every live agent's changed digest facts to the knowledge plane."""
        pubs: list[Message] = []
        for agent_id in sorted(self.host.agents):
            agent = self.host.agents[agent_id]
            changed: dict[str, Any] = {}
            for key in agent.impl.digest_keys:
                version = agent.facts.version(key)
                if version > self._exported.get((str(agent_id), key), 0):
                    changed[key] = agent.facts.export([key])[key]
                    self._exported[(str(agent_id), key)] = version
            if changed:
                pubs.append(
                    self.host.factory.new_message(
                        src=agent_id,
                        dst="kp.digest",
                        kind=MessageKind.EVENT,
                        payload=encode_body(
                            {
                                "topic": "kp.digest",
                                "body": {"agent": str(agent_id), "keys": changed},
                            }
                        ),
                        now=t,
                    )
                )
        if pubs:
            self.bus.send(pubs)
            self.bus.run_to_quiescence()

    # -- whole runs ------------------------------------------------------------

    def run(self) -> dict[str, Any]:
        self.genesis()
        for t in range(self.scenario.duration):
            self.tick(t)
        return self.outcome()

    def outcome(self) -> dict[str, Any]:
        session = self.host.agents.get(AgentId(FunctionKind.SESSION, 0))
        ledger = session.facts.get("sessions", {}) if session else {}
        return {
            "mode": "agents",
            "seed": self.scenario.seed,
            "tables": self.sim.table_docs(self.scenario.duration),
            "ledger": ledger,
            "metrics": self.sim.metrics(),
        }
