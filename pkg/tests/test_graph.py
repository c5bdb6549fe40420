from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cloudlens.actions import Domain, FlowMode, Schema, precompromise
from cloudlens.graph import build_attack_graph, graph_lower_bound
from cloudlens.ingest import compile_snapshot
from cloudlens.model import AttackType, IamState
from cloudlens.planner import Limits, Status, find_min_plan, search
from cloudlens.scenarios import scenario
from oracles import small_instance

PT = Domain(mode=FlowMode.PER_TUPLE)


def load(name):
    snap, _ = scenario(name)
    return compile_snapshot(snap)[0]


def test_impact_goal_at_layer_three():
    g = build_attack_graph(load("impact_listing"), AttackType.IMPACT, PT)
    assert graph_lower_bound(g) == 3


def test_empty_state_fixpoint():
    g = build_attack_graph(IamState(), AttackType.IMPACT, PT)
    assert g.fixpoint and len(g.levels) == 1
    assert graph_lower_bound(g) is None


def test_walkthrough_chain_across_layers():
    g = build_attack_graph(load("flow_walkthrough"), AttackType.IMPACT, PT)
    layer_of = {}
    for k, level in enumerate(g.levels):
        for node in level.actions:
            if node.action is not None:
                layer_of.setdefault(node.action.schema, k)
    assert layer_of[Schema.PERM_FLOW_ID4] < layer_of[Schema.ADD_ID3] < layer_of[Schema.PERM_FLOW_DS3]
    assert layer_of[Schema.PERM_FLOW_DS3] - layer_of[Schema.PERM_FLOW_ID4] == 2
    assert any(e[1].schema is Schema.PERM_FLOW_ID4 for e in g.edges(layer_of[Schema.PERM_FLOW_ID4]))


def test_exfiltration_per_user_bound():
    s = precompromise(load("exfiltration_listing"), "user_0")
    goal = AttackType.SENSITIVE_DATA_EXFILTRATION
    assert graph_lower_bound(build_attack_graph(s, goal, PT)) == 1
    assert find_min_plan(s, goal, PT).cost == 1


def test_unreachable_goal_consistent():
    s = load("exfiltration_listing")
    g = build_attack_graph(s, AttackType.RANSOMWARE, PT)
    assert graph_lower_bound(g) is None
    assert find_min_plan(s, AttackType.RANSOMWARE, PT) is None


@settings(max_examples=60)
@given(st.integers(0, 100_000))
def test_bound_is_admissible(seed):
    state, goal, domain = small_instance(seed)
    outcome = search(state, goal, domain, Limits(max_states=3000))
    assume(outcome.status is not Status.EXHAUSTED)
    bound = graph_lower_bound(build_attack_graph(state, goal, domain))
    if outcome.plan is None:
        return
    assert bound is not None and bound <= outcome.plan.cost
