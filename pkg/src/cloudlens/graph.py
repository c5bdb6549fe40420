"""Layered attack graph (a delete-relaxed planning graph with mutexes).

Fact layers hold tuples and status facts; action layers hold the relaxed
actions whose preconditions appear, pairwise non-mutex, in the layer
before.  The only genuine interference in the relaxed domain is the
select-once rule, so mutexes start at the select actions and spread
through competing needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from cloudlens.actions import (
    SELECTED,
    Atom,
    Domain,
    FlowMode,
    Goal,
    GroundAction,
    Schema,
    applicable_actions,
    as_domain,
    effects,
    flag_atom,
    goal_flag,
    precondition,
    state_atoms,
    state_from_atoms,
)
from cloudlens.model import IamState

Pair = frozenset


@dataclass(frozen=True)
class GraphAction:
    """One disjunct of a ground action: the action plus the precondition it uses."""

    action: GroundAction | None      # None for a no-op
    pre: frozenset[Atom]
    adds: frozenset[Atom]

    @property
    def is_select(self) -> bool:
        return self.action is not None and self.action.schema is Schema.SELECT_COMPROMISED_USER


@dataclass
class Level:
    facts: frozenset[Atom]
    fact_mutex: frozenset[Pair] = frozenset()
    actions: tuple[GraphAction, ...] = ()       # actions leading out of this layer
    action_mutex: frozenset[Pair] = frozenset()


@dataclass
class AttackGraph:
    levels: list[Level] = field(default_factory=list)
    goal: str = ""
    fixpoint: bool = False

    def fact_layer(self, k: int) -> frozenset[Atom]:
        return self.levels[k].facts

    def edges(self, k: int) -> list[tuple[Atom, GroundAction, Atom]]:
        """(precondition, action, effect) links out of layer k."""
        out = []
        for ga in self.levels[k].actions:
            if ga.action is None:
                continue
            for p in sorted(ga.pre, key=repr):
                for e in sorted(ga.adds, key=repr):
                    out.append((p, ga.action, e))
        return out


def _noop_interferes_with_select(atom: Atom) -> bool:
    # selecting is only possible while nobody is compromised
    return atom == SELECTED or (hasattr(atom, "pred") and atom.pred == "compromised_id")


def build_attack_graph(initial: IamState, goal: Goal, mode: FlowMode | Domain | None = None,
                       max_levels: int = 64, *, stop_at_goal: bool = True) -> AttackGraph:
    """Expand layers until the goal flag appears (or, without ``stop_at_goal``,
    until facts and mutexes stop changing)."""
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")
    domain = as_domain(mode)
    allow_select = not initial.compromised
    graph = AttackGraph(goal=goal_flag(goal))
    level = Level(facts=frozenset(state_atoms(initial)))
    graph.levels.append(level)
    flag = flag_atom(graph.goal)
    for _ in range(max_levels):
        if stop_at_goal and flag in level.facts:
            break
        facts = level.facts
        mutex = level.fact_mutex
        pseudo = state_from_atoms(facts)
        nodes: list[GraphAction] = []
        for action in applicable_actions(pseudo, domain, goal, relaxed=True):
            if action.schema is Schema.SELECT_COMPROMISED_USER and not allow_select:
                continue
            adds = frozenset(effects(pseudo, action, domain).adds)
            if action.schema is Schema.SELECT_COMPROMISED_USER:
                adds |= {SELECTED}
            pre = precondition(action, domain, goal)
            for variant in pre.variants:
                if not variant <= facts:
                    continue
                if any(Pair(p) in mutex for p in combinations(sorted(variant, key=repr), 2)):
                    continue
                nodes.append(GraphAction(action, variant, adds))
        nodes += [GraphAction(None, frozenset({f}), frozenset({f})) for f in facts]

        # action mutexes: select interference plus competing needs
        in_mutex = {a for pair in mutex for a in pair}
        tainted = [
            i for i, n in enumerate(nodes)
            if n.is_select
            or (n.action is None and _noop_interferes_with_select(next(iter(n.pre))))
            or not in_mutex.isdisjoint(n.pre)
        ]
        act_mutex: set[Pair] = set()
        for i, j in combinations(tainted, 2):
            a, b = nodes[i], nodes[j]
            if a.action is not None and a.action == b.action:
                continue
            clash = (a.is_select and b.is_select) or (
                a.is_select and b.action is None and _noop_interferes_with_select(next(iter(b.pre)))
            ) or (
                b.is_select and a.action is None and _noop_interferes_with_select(next(iter(a.pre)))
            ) or any(Pair((p, q)) in mutex for p in a.pre for q in b.pre if p != q)
            if clash:
                act_mutex.add(Pair((i, j)))
        level.actions = tuple(nodes)
        level.action_mutex = frozenset(act_mutex)

        achievers: dict[Atom, list[int]] = {}
        for i, n in enumerate(nodes):
            for a in n.adds:
                achievers.setdefault(a, []).append(i)
        new_facts = frozenset(achievers)
        tainted_set = set(tainted)
        # a fact pair can only be mutex if every achiever of both is tainted
        candidates = sorted(
            (f for f, ach in achievers.items() if all(i in tainted_set for i in ach)), key=repr
        )
        new_mutex: set[Pair] = set()
        for p, q in combinations(candidates, 2):
            if all(
                i != j and Pair((i, j)) in act_mutex
                for i in achievers[p] for j in achievers[q]
            ):
                new_mutex.add(Pair((p, q)))
        nxt = Level(facts=new_facts, fact_mutex=frozenset(new_mutex))
        if nxt.facts == level.facts and nxt.fact_mutex == level.fact_mutex:
            graph.fixpoint = True
            break
        graph.levels.append(nxt)
        level = nxt
    return graph


def graph_lower_bound(graph: AttackGraph, goal: Goal | None = None) -> int | None:
    """Index of the first fact layer holding the goal flag; None if unreachable."""
    flag = flag_atom(graph.goal if goal is None else goal_flag(goal))
    for k, level in enumerate(graph.levels):
        if flag in level.facts:
            return k
    return None
