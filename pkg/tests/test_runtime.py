"""Agent runtime: facts store, plan validation, and the six-stage pipeline."""
import pytest

from masdn.core import AgentId, FunctionKind, MessageKind
from masdn.hierarchy import Policy
from masdn.pps import encode_body
from masdn.runtime import (
    AgentHost,
    AgentNotLive,
    AgentSpec,
    CognitionOutcome,
    DuplicateAgent,
    FactsStore,
    Plan,
    PlanStep,
    UnknownCognition,
    decision,
    register_cognition,
    step,
    validate_plan,
)

STAGES = ("input", "facts", "cognition", "planning", "validation", "output")


@register_cognition("scripted")
def _scripted(facts, inp):
    """Obeys the request body: {"decision": {...}, "confidence": x}."""
    body = inp.body if isinstance(inp.body, dict) else {}
    return CognitionOutcome(body.get("decision", {}), body.get("confidence", 1.0))


def spawn(host, kind=FunctionKind.ROUTING, instance=0, facts=None):
    spec = AgentSpec(
        agent=AgentId(kind, instance),
        cognition="scripted",
        initial_facts=facts or {},
    )
    return host.spawn_agent(spec)


def tell(host, agent_id, body, kind=MessageKind.REQUEST, src=None):
    msg = host.factory.new_message(
        src=src or AgentId(FunctionKind.SESSION, 9),
        dst=agent_id,
        kind=kind,
        payload=encode_body(body),
        now=host.now,
    )
    return host.process_input(agent_id, msg)


class TestFactsStore:
    def test_versions_count_writes_per_key(self):
        store = FactsStore()
        assert store.put("topology", {"links": []}, now=0) == 1
        assert store.put("topology", {"links": [1]}, now=1) == 2
        assert store.put("other", "x", now=1) == 1

    def test_snapshot_key_set_is_isolated_from_the_store(self):
        store = FactsStore()
        store.put("view", {"n": 1}, now=0)
        snap = store.snapshot()
        snap["extra"] = "x"
        del snap["view"]
        assert store.get("view") == {"n": 1}
        assert store.get("extra") is None

    def test_put_copies_the_value(self):
        store = FactsStore()
        doc = {"n": 1}
        store.put("view", doc, now=0)
        doc["n"] = 99
        assert store.get("view") == {"n": 1}

    def test_export_restore_round_trip_keeps_versions(self):
        store = FactsStore()
        store.put("a", 1, now=0)
        store.put("a", 2, now=3)
        store.put("b", "x", now=3)
        digest = store.export(["a", "b"])
        fresh = FactsStore()
        fresh.restore(digest)
        assert fresh.get("a") == 2
        assert fresh.get("b") == "x"
        # versions continue above the restored ones, they do not restart
        assert fresh.put("a", 3, now=4) == 3


class TestHostLifecycle:
    def test_spawning_same_id_twice_is_rejected(self):
        host = AgentHost()
        spawn(host)
        with pytest.raises(DuplicateAgent):
            spawn(host)

    def test_unknown_cognition_is_rejected_at_spawn(self):
        host = AgentHost()
        spec = AgentSpec(agent=AgentId(FunctionKind.ROUTING, 0), cognition="nope")
        with pytest.raises(UnknownCognition):
            host.spawn_agent(spec)

    def test_facts_write_to_stopped_agent_fails(self):
        host = AgentHost()
        agent = spawn(host)
        host.kill_agent(agent.id)
        with pytest.raises(AgentNotLive):
            host.update_facts(agent.id, "k", 1)


class TestValidatePlan:
    def test_empty_plan_fails_with_stable_constraint_id(self):
        report = validate_plan(Plan.of(), {})
        assert not report.passed
        assert [v.constraint for v in report.violations] == ["empty-plan"]

    def test_consistent_plan_passes_without_policies(self):
        plan = Plan.of(PlanStep("install-rule", "sw1", {"rule": {}}))
        facts = {"topology": {"switches": ["sw1"], "links": [], "hosts": {}}}
        assert validate_plan(plan, facts).passed

    def test_switch_steps_need_topology_knowledge(self):
        plan = Plan.of(PlanStep("install-rule", "sw1", {"rule": {}}))
        report = validate_plan(plan, {})
        assert [v.constraint for v in report.violations] == ["missing-topology"]

    def test_unknown_switch_target_is_flagged(self):
        plan = Plan.of(PlanStep("install-rule", "sw9", {"rule": {}}))
        facts = {"topology": {"switches": ["sw1"], "links": [], "hosts": {}}}
        report = validate_plan(plan, facts)
        assert [v.constraint for v in report.violations] == ["unknown-target"]

    def test_agent_targets_must_be_known_peers(self):
        target = AgentId(FunctionKind.ROUTING, 0)
        plan = Plan.of(PlanStep("path", target, {}))
        assert not validate_plan(plan, {"peers": []}).passed
        assert validate_plan(plan, {"peers": ["routing#0"]}).passed


def _rule_doc(src, dst, priority=10):
    return {
        "rule_id": "",
        "match": {"src": src, "dst": dst},
        "priority": priority,
        "action": "deliver",
        "next_hop": None,
    }


class TestPolicyCaps:
    policy = Policy.from_dict(
        {
            "policy_id": "net-cap",
            "issuer_level": "network",
            "scope": ["forwarding"],
            "rules": [
                {
                    "action_kind": "install-rule",
                    "target_class": "switch",
                    "effect": "deny",
                    "max_per_target": 2,
                }
            ],
        }
    )
    facts = {"topology": {"switches": ["sw1"], "links": [], "hosts": {}}}

    def plan_installing(self, *pairs):
        return Plan.of(
            *(PlanStep("install-rule", "sw1", {"rule": _rule_doc(s, d)}) for s, d in pairs)
        )

    def test_up_to_the_cap_passes(self):
        plan = self.plan_installing(("h1", "h2"), ("h1", "h3"))
        assert validate_plan(plan, self.facts, [self.policy]).passed

    def test_exceeding_the_cap_fails(self):
        plan = self.plan_installing(("h1", "h2"), ("h1", "h3"), ("h2", "h3"))
        report = validate_plan(plan, self.facts, [self.policy])
        assert not report.passed
        assert [v.constraint for v in report.violations] == ["net-cap"]

    def test_existing_occupancy_counts(self):
        facts = dict(self.facts)
        facts["switch-rules"] = {"sw1": {"h1|h2|10": "r1", "h1|h3|10": "r2"}}
        plan = self.plan_installing(("h2", "h3"))
        assert not validate_plan(plan, facts, [self.policy]).passed

    def test_replacing_an_existing_slot_is_free(self):
        facts = dict(self.facts)
        facts["switch-rules"] = {"sw1": {"h1|h2|10": "r1", "h1|h3|10": "r2"}}
        plan = self.plan_installing(("h1", "h2"))
        assert validate_plan(plan, facts, [self.policy]).passed

    def test_wildcard_policy_credits_in_plan_removals(self):
        wildcard = Policy.from_dict(
            {
                "policy_id": "net-cap-any",
                "issuer_level": "network",
                "scope": ["forwarding"],
                "rules": [
                    {
                        "action_kind": "*",
                        "target_class": "switch",
                        "effect": "deny",
                        "max_per_target": 2,
                    }
                ],
            }
        )
        facts = dict(self.facts)
        facts["switch-rules"] = {"sw1": {"h1|h2|10": "r1", "h1|h3|10": "r2"}}
        plan = Plan.of(
            PlanStep("remove-rule", "sw1", {"rule": _rule_doc("h1", "h2")}),
            PlanStep("install-rule", "sw1", {"rule": _rule_doc("h2", "h3")}),
        )
        assert validate_plan(plan, facts, [wildcard]).passed

    def test_install_scoped_policy_ignores_removals_conservatively(self):
        # the cap only watches installs, so the in-plan removal earns no
        # credit and the whole plan is rejected: occupancy never overshoots
        facts = dict(self.facts)
        facts["switch-rules"] = {"sw1": {"h1|h2|10": "r1", "h1|h3|10": "r2"}}
        plan = Plan.of(
            PlanStep("remove-rule", "sw1", {"rule": _rule_doc("h1", "h2")}),
            PlanStep("install-rule", "sw1", {"rule": _rule_doc("h2", "h3")}),
        )
        assert not validate_plan(plan, facts, [self.policy]).passed


class TestPipeline:
    def test_six_stages_in_order_for_every_run(self):
        host = AgentHost()
        agent = spawn(host)
        tell(host, agent.id, {"decision": decision(responses=[{"ok": True}])})
        stages = [e["stage"] for e in host.stage_log if e["stage"] in STAGES]
        assert tuple(stages) == STAGES

    def test_facts_stage_applies_policy_messages(self):
        host = AgentHost()
        agent = spawn(host)
        doc = TestPolicyCaps.policy.to_dict()
        tell(host, agent.id, doc, kind=MessageKind.POLICY)
        assert agent.facts.get("policies") == [doc]

    def test_failed_validation_yields_violation_event_and_nothing_else(self):
        host = AgentHost()
        agent = spawn(host, facts={"peers": []})
        bad = decision(
            plan=[step("classify", "classifier#0")],
            responses=[{"ok": True}],
        )
        out = tell(host, agent.id, {"decision": bad})
        assert [m.kind for m in out] == [MessageKind.EVENT]
        assert str(out[0].dst) == "events.violation"
        validation = [e for e in host.stage_log if e["stage"] == "validation"][-1]
        assert validation["passed"] is False

    def test_facts_are_not_written_when_validation_fails(self):
        host = AgentHost()
        agent = spawn(host, facts={"peers": []})
        bad = decision(
            plan=[step("classify", "classifier#0")],
            facts=[("note", "should not stick")],
        )
        tell(host, agent.id, {"decision": bad})
        assert agent.facts.get("note") is None

    def test_low_confidence_escalates_to_the_level_above(self):
        host = AgentHost()
        routing = spawn(host, kind=FunctionKind.ROUTING, facts={"peers": ["fault#0"]})
        fault = spawn(host, kind=FunctionKind.FAULT)
        out = tell(host, routing.id, {"decision": decision(responses=[{"ok": 1}]), "confidence": 0.2})
        # the only output is the escalation request to the node-level handler
        assert [str(m.dst) for m in out] == [str(fault.id)]
        assert [m.kind for m in out] == [MessageKind.REQUEST]

    def test_explicit_escalation_suppresses_responses(self):
        host = AgentHost()
        routing = spawn(host, kind=FunctionKind.ROUTING)
        spawn(host, kind=FunctionKind.FAULT)
        dec = decision(responses=[{"ok": 1}], escalate={"reason": "stuck"})
        out = tell(host, routing.id, {"decision": dec})
        assert all(m.kind is not MessageKind.RESPONSE for m in out)

    def test_every_action_message_follows_a_passed_validation(self):
        host = AgentHost()
        agent = spawn(host, facts={"peers": ["classifier#0"]})
        tell(
            host,
            agent.id,
            {"decision": decision(plan=[step("classify", "classifier#0")])},
        )
        by_run = {}
        for entry in host.stage_log:
            if "run" in entry:
                by_run.setdefault(entry["run"], []).append(entry)
        for entries in by_run.values():
            stages = {e["stage"]: e for e in entries}
            emitted = stages["output"]["emitted"]
            if any(kind in ("request", "policy") for kind, _ in emitted):
                assert stages["validation"]["passed"] is True
