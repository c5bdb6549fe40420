"""Worked scenarios, seeded random snapshots and the set-cover reduction."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from importlib import resources
from itertools import combinations
from typing import Any

from cloudlens import vocab
from cloudlens.actions import CustomGoal, Domain, FlowMode, Goal
from cloudlens.ingest import (
    Effect,
    PolicyDocument,
    PolicyStatement,
    Snapshot,
    parse_snapshot,
    snapshot_to_dict,
)
from cloudlens.model import (
    DATASTORE_PRED,
    IDENTITY_PRED,
    ROLE_PRED,
    USER_PRED,
    Datastore,
    Ds3,
    EntityId,
    Fact,
    IamState,
    Id3,
    Identity,
    Kind,
    parse_attack,
)
from cloudlens.vocab import Family

SCENARIOS = (
    "ransomware_listing",
    "impact_listing",
    "exfiltration_listing",
    "admin_chain_listing",
    "flow_walkthrough",
)


@dataclass(frozen=True)
class Expected:
    goal: Goal
    optimal_cost: int
    mode: FlowMode
    per_user_cost: int | None = None


def fixture_text(name: str) -> str:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return resources.files("cloudlens.fixtures").joinpath(f"{name}.json").read_text("utf-8")


def _expectations() -> dict[str, Any]:
    text = resources.files("cloudlens.fixtures").joinpath("expected.json").read_text("utf-8")
    return json.loads(text)


def scenario(name: str) -> tuple[Snapshot, Expected]:
    snap = parse_snapshot(fixture_text(name))
    raw = _expectations()[name]
    expected = Expected(
        goal=parse_attack(raw["goal"]),
        optimal_cost=raw["optimal_cost"],
        mode=FlowMode(raw["mode"]),
        per_user_cost=raw.get("per_user_cost"),
    )
    return snap, expected


# --------------------------------------------------------------------------- random snapshots


@dataclass(frozen=True)
class GenParams:
    seed: int = 0
    users: int = 3
    groups: int = 1
    roles: int = 2
    datastores: int = 2
    policies: int = 3
    membership_density: float = 0.3
    trust_density: float = 0.2
    attachment_density: float = 0.3
    grant_density: float = 0.15
    wildcard_fraction: float = 0.1
    sensitive_fraction: float = 0.5
    public_fraction: float = 0.3
    accounts: int = 1

    def __post_init__(self) -> None:
        counts = (self.users, self.groups, self.roles, self.datastores, self.policies)
        if any(c < 0 for c in counts) or sum(counts) > 500:
            raise ValueError("entity counts must be non-negative and total at most 500")
        if self.accounts < 1:
            raise ValueError("accounts must be >= 1")


# (api, resource kind) pairs random policies draw from
GRANT_POOL: tuple[tuple[str, str], ...] = (
    ("s3:GetObject", "Datastore"),
    ("s3:PutObject", "Datastore"),
    ("s3:DeleteObject", "Datastore"),
    ("s3:DeleteBucket", "Datastore"),
    ("s3:CreateBucket", "Datastore"),
    ("kms:CreateKey", "Datastore"),
    ("sts:AssumeRole", "Role"),
    ("iam:AttachRolePolicy", "Role"),
    ("iam:AttachUserPolicy", "User"),
    ("iam:AddUserToGroup", "Group"),
    ("iam:UpdateAssumeRolePolicy", "Role"),
    ("iam:CreateUser", "User"),
    ("iam:CreateLoginProfile", "User"),
    ("iam:DeleteRole", "Role"),
    ("*", "Datastore"),
)


def random_snapshot(params: GenParams) -> Snapshot:
    """Seeded synthetic inventory; the same params always give the same snapshot."""
    rng = random.Random(params.seed)

    def account(i: int) -> str:
        return f"acct{i % params.accounts}" if params.accounts > 1 else ""

    users = [f"user_{i}" for i in range(params.users)]
    groups = [f"group_{i}" for i in range(params.groups)]
    roles = [f"role_{i}" for i in range(params.roles)]
    stores = [f"data_store_{i}" for i in range(params.datastores)]
    policies = [f"policy_{i}" for i in range(params.policies)]
    by_kind = {"User": users, "Group": groups, "Role": roles, "Datastore": stores}

    identities = tuple(
        Identity(EntityId(n, account(i)), kind)
        for names, kind in ((users, Kind.USER), (groups, Kind.GROUP), (roles, Kind.ROLE))
        for i, n in enumerate(names)
    )
    datastores = tuple(
        Datastore(
            EntityId(n, account(i)),
            is_public=rng.random() < params.public_fraction,
            has_sensitive_data=rng.random() < params.sensitive_fraction,
        )
        for i, n in enumerate(stores)
    )
    docs = []
    for i, pname in enumerate(policies):
        statements = []
        for api, kind in GRANT_POOL:
            if rng.random() >= params.grant_density:
                continue
            targets = by_kind[kind]
            if rng.random() < params.wildcard_fraction or not targets:
                resource = "*"
            else:
                resource = rng.choice(targets)
            statements.append(PolicyStatement(Effect.ALLOW, (api,), (resource,)))
        docs.append(PolicyDocument(EntityId(pname, account(i)), tuple(statements)))
    memberships = tuple(
        (u, g) for u in users for g in groups if rng.random() < params.membership_density
    )
    trust = tuple((u, r) for u in users for r in roles if rng.random() < params.trust_density)
    attachments = tuple(
        (ident, p) for ident in users + groups + roles for p in policies
        if rng.random() < params.attachment_density
    )
    snap = Snapshot(identities, datastores, tuple(docs), attachments, memberships, trust)
    # round-trip through the document format so the result is validated
    return parse_snapshot(snapshot_to_dict(snap))


# --------------------------------------------------------------------------- set cover


@dataclass(frozen=True)
class SetCoverInstance:
    universe: tuple[str, ...]
    subsets: tuple[tuple[str, frozenset[str]], ...]

    def __post_init__(self) -> None:
        if len(self.universe) > 20:
            raise ValueError("universe limited to 20 elements")
        if len(set(self.universe)) != len(self.universe):
            raise ValueError("duplicate universe element")
        known = set(self.universe)
        for name, members in self.subsets:
            if not members <= known:
                raise ValueError(f"subset {name} has elements outside the universe")

    @property
    def solvable(self) -> bool:
        covered = set().union(*(m for _, m in self.subsets)) if self.subsets else set()
        return covered >= set(self.universe)


CAN_ASSUME = "canAssume"
HAS_ELEMENT = "hasElement"
SET_COVER_ATTACKER = "S"
SET_COVER_DOMAIN = Domain(
    mode=FlowMode.BULK,
    flow_perms=vocab.FLOW_PERMISSIONS + (CAN_ASSUME,),
    extra_tokens=((CAN_ASSUME, Family.IDENTITY), (HAS_ELEMENT, Family.DATASTORE)),
)
SET_COVER_TOKENS = dict(SET_COVER_DOMAIN.extra_tokens)


def set_cover_goal(inst: SetCoverInstance) -> CustomGoal:
    return CustomGoal("setcover", tuple(("ds3", HAS_ELEMENT, v) for v in inst.universe))


def set_cover_snapshot(inst: SetCoverInstance) -> IamState:
    """Attack instance whose optimal plan cost is the minimum cover size plus one.

    Identity S starts compromised and may assume every subset identity;
    subset S_j holds ``hasElement`` over each of its elements.
    """
    s = SET_COVER_ATTACKER
    tuples = {Id3(s, CAN_ASSUME, name) for name, _ in inst.subsets}
    tuples |= {Ds3(name, HAS_ELEMENT, v) for name, members in inst.subsets for v in members}
    facts = {Fact(USER_PRED, s), Fact(IDENTITY_PRED, s)}
    for name, _ in inst.subsets:
        facts |= {Fact(ROLE_PRED, name), Fact(IDENTITY_PRED, name)}
    facts |= {Fact(DATASTORE_PRED, v) for v in inst.universe}
    return IamState(tuples=frozenset(tuples), compromised=frozenset({s}), facts=frozenset(facts))


def brute_force_min_cover(inst: SetCoverInstance) -> int | None:
    """Exact minimum cover size by trying selections of increasing size; None if infeasible."""
    target = set(inst.universe)
    sets = [m for _, m in inst.subsets]
    if len(sets) > 20:
        raise ValueError("at most 20 subsets")
    for k in range(len(sets) + 1):
        for chosen in combinations(sets, k):
            if set().union(*chosen) >= target:
                return k
    return None


def random_set_cover(seed: int, max_elements: int = 8, max_subsets: int = 6) -> SetCoverInstance:
    rng = random.Random(seed)
    n = rng.randint(0, max_elements)
    m = rng.randint(1, max_subsets)
    universe = tuple(f"v{i}" for i in range(1, n + 1))
    subsets = []
    for j in range(1, m + 1):
        members = frozenset(v for v in universe if rng.random() < 0.4)
        subsets.append((f"S{j}", members))
    return SetCoverInstance(universe, tuple(subsets))
