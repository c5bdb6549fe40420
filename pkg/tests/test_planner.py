import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cloudlens.actions import Domain, FlowMode, Schema, act
from cloudlens.ingest import compile_snapshot
from cloudlens.model import USER_PRED, AttackType, Fact, IamState
from cloudlens.planner import (
    AttackPlan,
    Limits,
    ResourceExhausted,
    Status,
    check_plan,
    enumerate_compromisable_users,
    find_min_plan,
    search,
    validate_plan,
)
from cloudlens.scenarios import scenario
from oracles import small_instance

PT = Domain(mode=FlowMode.PER_TUPLE)
LIMIT = Limits(max_states=3000)


def load(name):
    snap, expected = scenario(name)
    return compile_snapshot(snap)[0], expected


def test_impact_plan():
    state, _ = load("impact_listing")
    plan = find_min_plan(state, AttackType.IMPACT, PT)
    assert plan.lines() == [
        "(selectCompromisedUser user_181)",
        "(activate_ds_3tpl user_181 deleteBucket data_store_71)",
        "(deleteBucket user_181 data_store_71)",
    ]


def test_exfiltration_plan():
    state, _ = load("exfiltration_listing")
    plan = find_min_plan(state, AttackType.SENSITIVE_DATA_EXFILTRATION, PT)
    assert plan.lines() == [
        "(selectCompromisedUser user_0)",
        "(copyObject user_0 data_store_0 data_store_138)",
    ]


def test_admin_chain_plan_shape():
    state, _ = load("admin_chain_listing")
    plan = find_min_plan(state, AttackType.PRIVILEGE_ESCALATION, PT)
    assert plan.cost == 6
    assert plan.actions[0] == act(Schema.SELECT_COMPROMISED_USER, "user_9")
    assert plan.actions[-1] == act(Schema.REACH_ADMIN_POLICY, "user_9")
    assert validate_plan(state, plan, AttackType.PRIVILEGE_ESCALATION, PT)


def test_no_users_no_plan():
    state, _ = load("impact_listing")
    bare = IamState(tuples=state.tuples, facts=frozenset(f for f in state.facts
                                                        if f.pred != USER_PRED))
    assert find_min_plan(bare, AttackType.IMPACT, PT) is None


def test_empty_plan_on_satisfied_state():
    s = IamState(attack_flags=frozenset({AttackType.IMPACT.value}))
    assert find_min_plan(s, AttackType.IMPACT) == AttackPlan()
    assert validate_plan(s, AttackPlan(), AttackType.IMPACT)


def test_swapped_impact_steps_rejected():
    state, _ = load("impact_listing")
    plan = find_min_plan(state, AttackType.IMPACT, PT)
    a = plan.actions
    swapped = AttackPlan((a[0], a[2], a[1]))
    check = check_plan(state, swapped, AttackType.IMPACT, PT)
    assert not check.ok and check.failed_at == 1


def test_limits_raise():
    state, _ = load("admin_chain_listing")
    with pytest.raises(ResourceExhausted):
        find_min_plan(state, AttackType.PRIVILEGE_ESCALATION, PT, Limits(max_states=3))
    outcome = search(state, AttackType.PRIVILEGE_ESCALATION, PT, Limits(max_seconds=0.0))
    assert outcome.status is Status.EXHAUSTED


def test_per_user_exfiltration():
    state, _ = load("exfiltration_listing")
    found = enumerate_compromisable_users(state, AttackType.SENSITIVE_DATA_EXFILTRATION, PT)
    assert [(u, p.lines()) for u, p in found] == [
        ("user_0", ["(copyObject user_0 data_store_0 data_store_138)"]),
    ]


def test_per_user_no_permissions():
    s = IamState(facts=frozenset({Fact(USER_PRED, "u1"), Fact(USER_PRED, "u2")}))
    for attack in AttackType:
        assert enumerate_compromisable_users(s, attack, PT) == []


def test_parallel_enumeration_matches_serial():
    state, _ = load("admin_chain_listing")
    goal = AttackType.PRIVILEGE_ESCALATION
    serial = enumerate_compromisable_users(state, goal, PT, jobs=1)
    parallel = enumerate_compromisable_users(state, goal, PT, jobs=4)
    assert serial == parallel


def test_search_is_deterministic():
    state, _ = load("flow_walkthrough")
    plans = {tuple(find_min_plan(state, AttackType.IMPACT, PT).lines()) for _ in range(3)}
    assert len(plans) == 1


@settings(max_examples=30)
@given(st.integers(0, 400))
def test_per_user_matches_restricted_search(seed):
    state, goal, domain = small_instance(seed)
    users = state.entities_with(USER_PRED)
    found = dict(enumerate_compromisable_users(state, goal, domain, LIMIT))
    for u in users:
        outcome = search(state, goal, domain, LIMIT, candidates=[u])
        assume(outcome.status is not Status.EXHAUSTED)
        if u in found:
            assert outcome.plan is not None and outcome.plan.cost == found[u].cost + 1
        else:
            assert outcome.plan is None


@settings(max_examples=30)
@given(st.integers(0, 400), st.data())
def test_adding_tuples_never_hurts(seed, data):
    state, goal, domain = small_instance(seed)
    assume(goal is not AttackType.SENSITIVE_DATA_EXFILTRATION)
    base = search(state, goal, domain, LIMIT)
    assume(base.status is Status.FOUND)
    donor, _, _ = small_instance(seed + 10_000)
    pool = sorted(donor.tuples, key=lambda t: t.sort_key)
    assume(pool)
    extra = data.draw(st.sets(st.sampled_from(pool), max_size=3))
    richer = IamState(tuples=state.tuples | extra, facts=state.facts | donor.facts)
    more = search(richer, goal, domain, LIMIT)
    assume(more.status is not Status.EXHAUSTED)
    assert more.plan is not None and more.plan.cost <= base.plan.cost
