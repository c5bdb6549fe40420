"""Optimal breadth-first attack planning and plan validation."""

from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from cloudlens.actions import (
    ContractError,
    Domain,
    FlowMode,
    GroundAction,
    Goal,
    Schema,
    applicable_actions,
    apply,
    as_domain,
    goal_satisfied,
    is_applicable,
    precompromise,
)
from cloudlens.model import USER_PRED, IamState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttackPlan:
    actions: tuple[GroundAction, ...] = ()

    @property
    def cost(self) -> int:
        return sum(a.cost for a in self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def lines(self) -> list[str]:
        return [str(a) for a in self.actions]


@dataclass(frozen=True)
class Limits:
    max_states: int | None = None
    max_seconds: float | None = None


NO_LIMITS = Limits()


@dataclass
class SearchStats:
    expanded: int = 0
    generated: int = 0
    duplicates: int = 0
    wall_time: float = 0.0
    peak_frontier: int = 0
    ground_time: float = 0.0  # time spent generating successors


class Status(Enum):
    FOUND = "found"
    NO_PLAN = "no_plan"
    EXHAUSTED = "resource_exhausted"


@dataclass
class SearchOutcome:
    status: Status
    plan: AttackPlan | None
    stats: SearchStats


class ResourceExhausted(RuntimeError):
    """Search hit a state or time limit before settling the question."""

    def __init__(self, stats: SearchStats) -> None:
        super().__init__(
            f"search limit reached after {stats.expanded} expansions ({stats.wall_time:.2f}s)"
        )
        self.stats = stats


def _trace(parents: dict[IamState, tuple[IamState, GroundAction] | None],
           state: IamState) -> AttackPlan:
    actions = []
    link = parents[state]
    while link is not None:
        prev, action = link
        actions.append(action)
        link = parents[prev]
    return AttackPlan(tuple(reversed(actions)))


def search(initial: IamState, goal: Goal, domain: Domain | FlowMode | None = None,
           limits: Limits = NO_LIMITS, candidates: Iterable[str] | None = None) -> SearchOutcome:
    """Breadth-first search over ground actions with structural duplicate detection.

    Successors are generated in (schema, params) order, so among optimal
    plans the lexicographically first one along the BFS tree is returned.
    ``candidates`` restricts which users the select action may pick.
    """
    domain = as_domain(domain)
    allowed = None if candidates is None else frozenset(candidates)
    stats = SearchStats()
    start = time.perf_counter()
    parents: dict[IamState, tuple[IamState, GroundAction] | None] = {initial: None}
    if goal_satisfied(initial, goal):
        stats.wall_time = time.perf_counter() - start
        return SearchOutcome(Status.FOUND, AttackPlan(), stats)
    frontier = deque([initial])
    stats.peak_frontier = 1
    while frontier:
        if limits.max_states is not None and len(parents) > limits.max_states:
            stats.wall_time = time.perf_counter() - start
            return SearchOutcome(Status.EXHAUSTED, None, stats)
        if limits.max_seconds is not None and time.perf_counter() - start > limits.max_seconds:
            stats.wall_time = time.perf_counter() - start
            return SearchOutcome(Status.EXHAUSTED, None, stats)
        state = frontier.popleft()
        stats.expanded += 1
        t0 = time.perf_counter()
        actions = list(applicable_actions(state, domain, goal))
        stats.ground_time += time.perf_counter() - t0
        for action in actions:
            if (allowed is not None and action.schema is Schema.SELECT_COMPROMISED_USER
                    and action.params[0] not in allowed):
                continue
            child = apply(state, action, domain, goal, check=False)
            stats.generated += 1
            if child in parents:
                stats.duplicates += 1
                continue
            parents[child] = (state, action)
            if goal_satisfied(child, goal):
                stats.wall_time = time.perf_counter() - start
                return SearchOutcome(Status.FOUND, _trace(parents, child), stats)
            frontier.append(child)
        stats.peak_frontier = max(stats.peak_frontier, len(frontier))
    stats.wall_time = time.perf_counter() - start
    return SearchOutcome(Status.NO_PLAN, None, stats)


def find_min_plan(initial: IamState, goal: Goal, domain: Domain | FlowMode | None = None,
                  limits: Limits = NO_LIMITS,
                  candidates: Iterable[str] | None = None) -> AttackPlan | None:
    """Minimum-cost plan, or None when no plan exists.

    Raises ResourceExhausted if the limits cut the search short.
    """
    outcome = search(initial, goal, domain, limits, candidates)
    if outcome.status is Status.EXHAUSTED:
        raise ResourceExhausted(outcome.stats)
    return outcome.plan


# --------------------------------------------------------------------------- per-user enumeration


@dataclass
class UserOutcome:
    user: str
    status: Status
    plan: AttackPlan | None
    stats: SearchStats = field(default_factory=SearchStats)


def _search_user(args: tuple[IamState, str, Goal, Domain, Limits]) -> UserOutcome:
    initial, user, goal, domain, limits = args
    outcome = search(precompromise(initial, user), goal, domain, limits)
    return UserOutcome(user, outcome.status, outcome.plan, outcome.stats)


def enumerate_users_detailed(initial: IamState, goal: Goal,
                             domain: Domain | FlowMode | None = None,
                             limits: Limits = NO_LIMITS, *, users: Sequence[str] | None = None,
                             jobs: int = 1) -> list[UserOutcome]:
    """One search per user with that user already compromised, sorted by user."""
    domain = as_domain(domain)
    names = sorted(users if users is not None else initial.entities_with(USER_PRED))
    work = [(initial, u, goal, domain, limits) for u in names]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as pool:
            results = list(pool.map(_search_user, work))
    else:
        results = [_search_user(w) for w in work]
    return sorted(results, key=lambda r: r.user)


def enumerate_compromisable_users(initial: IamState, goal: Goal,
                                  domain: Domain | FlowMode | None = None,
                                  limits: Limits = NO_LIMITS, *,
                                  users: Sequence[str] | None = None,
                                  jobs: int = 1) -> list[tuple[str, AttackPlan]]:
    outcomes = enumerate_users_detailed(initial, goal, domain, limits, users=users, jobs=jobs)
    for o in outcomes:
        if o.status is Status.EXHAUSTED:
            log.warning("search for user %s hit its limit", o.user)
    return [(o.user, o.plan) for o in outcomes if o.plan is not None]


# --------------------------------------------------------------------------- validation


def plan_domain(plan: AttackPlan | Sequence[GroundAction]) -> Domain:
    """Flow granularity implied by the actions a plan uses."""
    bulk = any(a.schema is Schema.PERM_FLOW_BULK for a in plan)
    return Domain(mode=FlowMode.BULK if bulk else FlowMode.PER_TUPLE)


@dataclass(frozen=True)
class PlanCheck:
    ok: bool
    failed_at: int | None = None   # 0-based index of the first inapplicable action
    reason: str = ""


def check_plan(initial: IamState, plan: AttackPlan | Sequence[GroundAction], goal: Goal,
               domain: Domain | FlowMode | None = None) -> PlanCheck:
    domain = plan_domain(plan) if domain is None else as_domain(domain)
    state = initial
    for i, action in enumerate(plan):
        if not is_applicable(state, action, domain, goal):
            return PlanCheck(False, i, f"step {i + 1} {action} is not applicable")
        try:
            state = apply(state, action, domain, goal)
        except ContractError as exc:  # pragma: no cover - guarded above
            return PlanCheck(False, i, str(exc))
    if not goal_satisfied(state, goal):
        return PlanCheck(False, None, "goal not reached after the last step")
    return PlanCheck(True)


def validate_plan(initial: IamState, plan: AttackPlan | Sequence[GroundAction], goal: Goal,
                  domain: Domain | FlowMode | None = None) -> bool:
    return check_plan(initial, plan, goal, domain).ok
