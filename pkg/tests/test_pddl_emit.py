import string

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cloudlens.actions import AssumeConstraint, Domain, FlowMode, PER_TUPLE_FLOWS, Schema
from cloudlens.ingest import compile_snapshot
from cloudlens.model import AttackType, IamState
from cloudlens.pddl_emit import (
    PddlError,
    PlanParseError,
    alias_table,
    emit_domain,
    emit_problem,
    format_plan,
    parse_plan_file,
    sanitize,
)
from cloudlens.planner import AttackPlan, find_min_plan, validate_plan
from cloudlens.scenarios import SCENARIOS, scenario
from pddl_sim import Simulator

MODES = [FlowMode.PER_TUPLE, FlowMode.BULK]


def documents(name, mode=None):
    snap, expected = scenario(name)
    mode = mode or expected.mode
    state, _ = compile_snapshot(snap)
    return (state, expected, emit_domain(mode, expected.goal),
            emit_problem(state, snap, expected.goal, mode, name))


def steps(plan):
    return [(a.schema.value, tuple(sanitize(p) for p in a.params)) for a in plan]


def action_block(text, name):
    start = text.index(f"(:action {name}\n")
    end = text.find("(:action", start + 1)
    return text[start:end if end > 0 else None]


def test_flow_precondition_text():
    block = action_block(emit_domain(FlowMode.PER_TUPLE).text, "permissionFlow_id_3tpl")
    assert "(or (id_tpl ?id1 assumerole ?id2) (id_tpl ?id1 belongsto ?id2) " \
           "(id_tpl ?id1 haspolicy ?id2))" in block
    assert "(not (id_tpl ?id1 ?perm ?id))" in block


def test_move_object_conditional_effect():
    block = action_block(emit_domain().text, "moveObject")
    assert "(when (is_public_datastore ?ds2) (sensitive_data_exfiltration))" in block


def test_mode_gating():
    bulk = emit_domain(FlowMode.BULK).text
    per = emit_domain(FlowMode.PER_TUPLE).text
    for schema in PER_TUPLE_FLOWS:
        assert f"(:action {schema.value}\n" not in bulk
        assert f"(:action {schema.value}\n" in per
    assert "(:action permissionFlow\n" in bulk and "(:action permissionFlow\n" not in per


def test_single_source_has_no_encoding():
    with pytest.raises(PddlError):
        emit_domain(Domain(constraint=AssumeConstraint.SINGLE_SOURCE))


def test_exfiltration_problem_init():
    _, _, _, problem = documents("exfiltration_listing")
    for fact in ("(ds_tpl user_0 s3_getobject data_store_0)", "(has_sensitive_data data_store_0)",
                 "(is_public_datastore data_store_138)"):
        assert f"    {fact}" in problem.text
    assert "(:goal (sensitive_data_exfiltration))" in problem.text


def test_empty_problem():
    text = emit_problem(IamState(), None, AttackType.IMPACT).text
    assert "(:objects)" in text
    assert "_tpl" not in text.split("(:init")[1]


@pytest.mark.parametrize("name", SCENARIOS)
@pytest.mark.parametrize("mode", MODES)
def test_documents_parse_and_are_stable(name, mode):
    first = documents(name, mode)
    again = documents(name, mode)
    assert first[2].text == again[2].text and first[3].text == again[3].text
    sim = Simulator(first[2].text, first[3].text)
    assert sim.actions


@pytest.mark.parametrize("name", SCENARIOS)
def test_internal_plan_runs_under_emitted_semantics(name):
    state, expected, domain, problem = documents(name)
    plan = find_min_plan(state, expected.goal, expected.mode)
    sim = Simulator(domain.text, problem.text)
    reached, failed = sim.run(steps(plan))
    assert failed is None and reached
    # dropping the final attack step must leave the goal unreached
    assert sim.run(steps(plan.actions[:-1])) == (False, None)


@pytest.mark.parametrize("name", SCENARIOS)
def test_reordered_plans_agree(name):
    state, expected, domain, problem = documents(name)
    plan = find_min_plan(state, expected.goal, expected.mode)
    sim = Simulator(domain.text, problem.text)
    acts = list(plan.actions)
    for i in range(len(acts) - 1):
        swapped = acts[:i] + [acts[i + 1], acts[i]] + acts[i + 2:]
        internal = validate_plan(state, AttackPlan(tuple(swapped)), expected.goal, expected.mode)
        assert internal == sim.run(steps(swapped))[0]


def test_listing_plan_parses(data_dir):
    plan = parse_plan_file((data_dir / "admin_chain.plan").read_text())
    assert len(plan) == 6
    assert plan.actions[1].schema is Schema.PERM_FLOW_ID4
    assert plan.actions[1].params == ("role_10", "role_13", "role_10", "hasPolicy", "adminPolicy")
    state, expected, domain, problem = documents("admin_chain_listing")
    assert validate_plan(state, plan, expected.goal)
    assert Simulator(domain.text, problem.text).run(steps(plan)) == (True, None)


def test_empty_plan_file():
    assert parse_plan_file("") == AttackPlan()
    assert parse_plan_file("; only a comment\n\n") == AttackPlan()


def test_plan_parse_errors():
    with pytest.raises(PlanParseError) as err:
        parse_plan_file("(selectCompromisedUser u1)\n(flyAway u1)\n")
    assert err.value.lineno == 2
    with pytest.raises(PlanParseError):
        parse_plan_file("(deleteBucket u1)")


def test_format_parse_roundtrip():
    state, expected, _, _ = documents("flow_walkthrough")
    plan = find_min_plan(state, expected.goal, expected.mode)
    assert parse_plan_file(format_plan(plan)) == plan


def test_problem_aliases_restore_names():
    _, _, _, problem = documents("ransomware_listing")
    assert problem.aliases["sensitivedatabucket"] == "sensitiveDataBucket"
    plan = parse_plan_file("(encryptSensitiveData user sensitivedatabucket any_datastore)",
                           problem.aliases)
    assert plan.actions[0].params == ("user", "sensitiveDataBucket", "any_datastore")


names = st.text(string.ascii_letters + string.digits + "_-.:/", min_size=1, max_size=8)


@given(st.sets(names, max_size=12))
def test_alias_table_is_injective_or_refuses(chosen):
    try:
        table = alias_table(chosen)
    except PddlError:
        lowered = [sanitize(n) for n in chosen]
        assert len(set(lowered)) < len(lowered)
        return
    assert sorted(table.values()) == sorted(chosen)
    for ident in table:
        assert ident[0].isalpha() and all(c.isalnum() or c in "_-" for c in ident)
