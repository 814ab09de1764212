"""Shared builders for randomized differential scenarios.

Everything here is pure construction: given a seeded random.Random it
produces topology/scenario documents the way an operator's config would
look. Link keys are always stored sorted so the duplicate-link check in
Topology.from_doc cannot be tripped by orientation.
"""
from __future__ import annotations

import random
from typing import Any

from masdn import AgentSystem, Scenario, Topology
from masdn.oracle import MonolithicController, compare

STRATEGIES = ("centralized", "distributed", "hybrid")


def gen_topology(rng: random.Random, n_switches: int) -> dict[str, Any]:
    """Random connected topology document: a spanning tree plus extra links."""
    switches = [f"sw{i + 1}" for i in range(n_switches)]
    links: list[dict[str, Any]] = []
    seen: set[tuple[str, str]] = set()

    def add(a: str, b: str) -> bool:
        key = (a, b) if a < b else (b, a)
        if key in seen or a == b:
            return False
        seen.add(key)
        links.append(
            {
                "a": key[0],
                "b": key[1],
                "capacity": rng.choice([10, 20, 50]),
                "latency": rng.randint(1, 5),
            }
        )
        return True

    for i in range(1, n_switches):
        add(switches[rng.randrange(i)], switches[i])
    for _ in range(rng.randint(0, n_switches)):
        add(*rng.sample(switches, 2))

    hosts = [
        {"id": f"h{i + 1}", "switch": rng.choice(switches)}
        for i in range(max(3, n_switches // 2))
    ]
    return {"switches": switches, "hosts": hosts, "links": links}


def gen_scenario(
    rng: random.Random,
    tdoc: dict[str, Any],
    n_flows: int,
    n_failures: int,
    duration: int,
    long_lived: bool = False,
) -> dict[str, Any]:
    """Random scenario over a topology document.

    With long_lived=True every flow keeps emitting units until the end of
    the run, which the recovery tests rely on: a reactive controller can
    only notice a flow while it still sends packets.
    """
    hosts = [h["id"] for h in tdoc["hosts"]]
    flows = []
    for _ in range(n_flows):
        src, dst = rng.sample(hosts, 2)
        start = rng.randint(1, duration // 3 if long_lived else duration // 2)
        gap = rng.randint(1, 2 if long_lived else 4)
        size = duration if long_lived else rng.randint(5, 60)
        flow = {"src": src, "dst": dst, "start_tick": start, "size": size, "gap": gap}
        if rng.random() < 0.3:
            flow["class"] = rng.choice(["realtime", "interactive", "bulk"])
        flows.append(flow)
    failures = []
    candidates = list(tdoc["links"])
    rng.shuffle(candidates)
    for link in candidates[:n_failures]:
        failures.append(
            {
                "a": link["a"],
                "b": link["b"],
                "at": rng.randrange(duration // 3, 2 * duration // 3),
            }
        )
    return {
        "seed": rng.randrange(10**6),
        "duration_ticks": duration,
        "flows": flows,
        "failures": failures,
    }


def build(tdoc: dict[str, Any], sdoc: dict[str, Any]) -> tuple[Topology, Scenario]:
    topo = Topology.from_doc(tdoc)
    return topo, Scenario.from_doc(sdoc, topo)


def run_both(
    tdoc: dict[str, Any], sdoc: dict[str, Any], config: dict[str, Any]
) -> tuple[dict[str, Any], dict[str, Any], dict[str, Any], AgentSystem]:
    """Run the agent system and the monolith on one scenario; return the diff too."""
    topo, scen = build(tdoc, sdoc)
    system = AgentSystem(topo, scen, dict(config))
    agents_out = system.run()
    mono_out = MonolithicController(topo, scen, dict(config)).run()
    return agents_out, mono_out, compare(agents_out, mono_out), system


def diff_is_empty(diff: dict[str, Any]) -> bool:
    return not any(diff[section][side] for section in diff for side in diff[section])
