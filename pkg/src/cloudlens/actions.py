"""Grounded action schemas, applicability and the transition function.

Preconditions are described symbolically (positive atom sets, one per
disjunct, plus negated atoms) so the same description drives the
successor check in ``apply``, the relaxed attack graph and the PDDL writer.
Successor generation in ``applicable_actions`` is a separate, indexed
enumeration; tests check the two agree.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Union

from cloudlens import vocab
from cloudlens.model import (
    DATASTORE_PRED,
    DUMMY_DS,
    IDENTITY_PRED,
    MFA,
    PUBLIC,
    SENSITIVE,
    USER_PRED,
    VERSIONING,
    AttackType,
    Ds3,
    Ds4,
    Fact,
    IamState,
    Id3,
    Id4,
    RelTuple,
)
from cloudlens.vocab import Family


class FlowMode(Enum):
    BULK = "bulk"
    PER_TUPLE = "per-tuple"


class AssumeConstraint(Enum):
    SINGLE_SOURCE = "single"
    UNRESTRICTED = "unrestricted"


class Schema(Enum):
    # values are the action names used in PDDL and plan files
    SELECT_COMPROMISED_USER = "selectCompromisedUser"
    PERM_FLOW_BULK = "permissionFlow"
    PERM_FLOW_ID3 = "permissionFlow_id_3tpl"
    PERM_FLOW_DS3 = "permissionFlow_ds_3tpl"
    PERM_FLOW_ID4 = "permissionFlow_id_4tpl"
    PERM_FLOW_DS4 = "permissionFlow_ds_4tpl"
    ADD_ID3 = "add_id_3tpl"
    ADD_DS3 = "add_ds_3tpl"
    ACTIVATE_ID3 = "activate_id_3tpl"
    ACTIVATE_DS3 = "activate_ds_3tpl"
    COPY_OBJECT = "copyObject"
    MOVE_OBJECT = "moveObject"
    DELETE_BUCKET = "deleteBucket"
    DELETE_IDENTITY = "deleteIdentity"
    CREATE_PUBLIC_BUCKET = "createPublicBucket"
    ENCRYPT_SENSITIVE_DATA = "encryptSensitiveData"
    GAIN_PERSISTENCE = "gainPersistence"
    CHANGE_USER_LOGIN = "changeUserLogin"
    REACH_ADMIN_POLICY = "reachAdminPolicy"
    ENABLE_ATTACK = "enableAttack"


ARITY: dict[Schema, int] = {
    Schema.SELECT_COMPROMISED_USER: 1,
    Schema.PERM_FLOW_BULK: 2,
    Schema.PERM_FLOW_ID3: 4,
    Schema.PERM_FLOW_DS3: 4,
    Schema.PERM_FLOW_ID4: 5,
    Schema.PERM_FLOW_DS4: 5,
    Schema.ADD_ID3: 4,
    Schema.ADD_DS3: 4,
    Schema.ACTIVATE_ID3: 3,
    Schema.ACTIVATE_DS3: 3,
    Schema.COPY_OBJECT: 3,
    Schema.MOVE_OBJECT: 3,
    Schema.DELETE_BUCKET: 2,
    Schema.DELETE_IDENTITY: 3,
    Schema.CREATE_PUBLIC_BUCKET: 2,
    Schema.ENCRYPT_SENSITIVE_DATA: 3,
    Schema.GAIN_PERSISTENCE: 3,
    Schema.CHANGE_USER_LOGIN: 3,
    Schema.REACH_ADMIN_POLICY: 1,
    Schema.ENABLE_ATTACK: 2,
}

PER_TUPLE_FLOWS = frozenset(
    {Schema.PERM_FLOW_ID3, Schema.PERM_FLOW_DS3, Schema.PERM_FLOW_ID4, Schema.PERM_FLOW_DS4}
)
FLOW_SCHEMAS = PER_TUPLE_FLOWS | {Schema.PERM_FLOW_BULK}

# attack schemas that can lead to each goal
ATTACK_SCHEMAS: dict[AttackType, tuple[Schema, ...]] = {
    AttackType.SENSITIVE_DATA_EXFILTRATION: (
        Schema.COPY_OBJECT, Schema.MOVE_OBJECT, Schema.CREATE_PUBLIC_BUCKET,
    ),
    AttackType.IMPACT: (Schema.DELETE_BUCKET, Schema.DELETE_IDENTITY),
    AttackType.PERSISTENCE: (Schema.GAIN_PERSISTENCE,),
    AttackType.LATERAL_MOVEMENT: (Schema.CHANGE_USER_LOGIN,),
    AttackType.PRIVILEGE_ESCALATION: (Schema.REACH_ADMIN_POLICY,),
    AttackType.RANSOMWARE: (Schema.ENCRYPT_SENSITIVE_DATA,),
}
ATTACK_SCHEMA_SET = frozenset(s for group in ATTACK_SCHEMAS.values() for s in group) | {
    Schema.ENABLE_ATTACK
}


class ContractError(RuntimeError):
    """An action was applied in a state where it is not applicable."""


@dataclass(frozen=True)
class GroundAction:
    schema: Schema
    params: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.params) != ARITY[self.schema]:
            raise ValueError(
                f"{self.schema.value} takes {ARITY[self.schema]} parameters, got {len(self.params)}"
            )

    def __lt__(self, other: GroundAction) -> bool:
        return self.sort_key < other.sort_key

    @property
    def sort_key(self) -> tuple[str, tuple[str, ...]]:
        return (self.schema.value, self.params)

    @property
    def cost(self) -> int:
        return 1

    @property
    def name(self) -> str:
        return self.schema.value

    def __str__(self) -> str:
        return f"({self.schema.value} {' '.join(self.params)})"


def act(schema: Schema, *params: str) -> GroundAction:
    return GroundAction(schema, tuple(params))


@dataclass(frozen=True)
class CustomGoal:
    """A goal outside the attack table, met by ``enableAttack(id, name)``.

    ``requires`` holds (form, perm, target) triples; the acting identity
    fills the holder slot.
    """

    name: str
    requires: tuple[tuple[str, str, str], ...]

    @property
    def flag(self) -> str:
        return self.name

    def required_tuples(self, holder: str) -> list[RelTuple]:
        cls = {"id3": Id3, "ds3": Ds3}
        return [cls[form](holder, perm, target) for form, perm, target in self.requires]


Goal = Union[AttackType, CustomGoal]


def goal_flag(goal: Goal) -> str:
    return goal.value if isinstance(goal, AttackType) else goal.flag


@dataclass(frozen=True)
class Domain:
    mode: FlowMode = FlowMode.PER_TUPLE
    constraint: AssumeConstraint = AssumeConstraint.UNRESTRICTED
    flow_perms: tuple[str, ...] = vocab.FLOW_PERMISSIONS
    extra_tokens: tuple[tuple[str, Family], ...] = ()

    def tokens(self, family: Family) -> tuple[str, ...]:
        base = vocab.IDENTITY_TOKENS if family is Family.IDENTITY else vocab.DATASTORE_TOKENS
        extra = {t for t, f in self.extra_tokens if f is family}
        return tuple(sorted((base | extra) - {vocab.FULL_CONTROL}))


DEFAULT_DOMAIN = Domain()


def as_domain(mode: FlowMode | Domain | None) -> Domain:
    if mode is None:
        return DEFAULT_DOMAIN
    if isinstance(mode, Domain):
        return mode
    return Domain(mode=mode)


# --------------------------------------------------------------------------- atoms

SELECTED = Fact("compromise_selected", "")
COMPROMISED = "compromised_id"
ATTACK = "attack"


def compromised_atom(name: str) -> Fact:
    return Fact(COMPROMISED, name)


def flag_atom(name: str) -> Fact:
    return Fact(ATTACK, name)


Atom = Union[RelTuple, Fact]


def holds(state: IamState, atom: Atom) -> bool:
    if isinstance(atom, RelTuple):
        return atom in state.tuples
    if atom == SELECTED:
        return bool(state.compromised)
    if atom.pred == COMPROMISED:
        return atom.arg in state.compromised
    if atom.pred == ATTACK:
        return atom.arg in state.attack_flags
    return atom in state.facts


def state_atoms(state: IamState) -> set[Atom]:
    atoms: set[Atom] = set(state.tuples) | set(state.facts)
    atoms |= {compromised_atom(c) for c in state.compromised}
    atoms |= {flag_atom(f) for f in state.attack_flags}
    if state.compromised:
        atoms.add(SELECTED)
    return atoms


def state_from_atoms(atoms: Iterable[Atom]) -> IamState:
    tuples, facts, compromised, flags = set(), set(), set(), set()
    for a in atoms:
        if isinstance(a, RelTuple):
            tuples.add(a)
        elif a.pred == COMPROMISED:
            compromised.add(a.arg)
        elif a.pred == ATTACK:
            flags.add(a.arg)
        elif a != SELECTED:
            facts.add(a)
    return IamState(
        tuples=frozenset(tuples), compromised=frozenset(compromised),
        attack_flags=frozenset(flags), facts=frozenset(facts),
    )


# --------------------------------------------------------------------------- flows


def is_flow_active(
    state: IamState, src: str, dst: str, flow_perms: Iterable[str] = vocab.FLOW_PERMISSIONS
) -> bool:
    """Whether permissions held by ``src`` may flow to ``dst``."""
    return any(Id3(dst, perm, src) in state.tuples for perm in flow_perms)


def _assume_only(state: IamState, src: str, dst: str, flow_perms: Iterable[str]) -> bool:
    """True when the src->dst flow is justified by an assumeRole edge alone."""
    if Id3(dst, vocab.ASSUME_ROLE, src) not in state.tuples:
        return False
    return not any(
        Id3(dst, p, src) in state.tuples for p in flow_perms if p != vocab.ASSUME_ROLE
    )


def _flow_ends(action: GroundAction) -> tuple[str, str]:
    """(source, target) of a flow action."""
    p = action.params
    if action.schema is Schema.PERM_FLOW_BULK:
        return p[0], p[1]
    if action.schema in (Schema.PERM_FLOW_ID3, Schema.PERM_FLOW_DS3):
        return p[0], p[3]
    return p[1], p[0]


def _binding_ok(state: IamState, src: str, dst: str, domain: Domain) -> bool:
    if domain.constraint is AssumeConstraint.UNRESTRICTED:
        return True
    if not _assume_only(state, src, dst, domain.flow_perms):
        return True
    bound = state.bound_source(dst)
    return bound is None or bound == src


# --------------------------------------------------------------------------- preconditions


@dataclass(frozen=True)
class Precondition:
    variants: tuple[frozenset[Atom], ...]   # disjunction of conjunctions
    negatives: frozenset[Atom] = frozenset()
    distinct: tuple[tuple[str, str], ...] = ()


_NEVER = Precondition(variants=())


def precondition(action: GroundAction, domain: Domain = DEFAULT_DOMAIN,
                 goal: Goal | None = None) -> Precondition:
    s, p = action.schema, action.params
    fc, au, ad = vocab.FULL_CONTROL, vocab.ANY_USER, vocab.ANY_DATASTORE
    if s is Schema.SELECT_COMPROMISED_USER:
        return Precondition((frozenset({Fact(USER_PRED, p[0])}),), frozenset({SELECTED}))

    def edges(src: str, dst: str, *extra: Atom) -> tuple[frozenset[Atom], ...]:
        return tuple(frozenset({SELECTED, Id3(dst, e, src), *extra}) for e in domain.flow_perms)

    if s in FLOW_SCHEMAS and not vocab.SENTINELS.isdisjoint(_flow_ends(action)):
        return _NEVER
    if s is Schema.PERM_FLOW_BULK:
        if domain.mode is not FlowMode.BULK:
            return _NEVER
        return Precondition(edges(p[0], p[1]), distinct=((p[0], p[1]),))
    if s in PER_TUPLE_FLOWS and domain.mode is not FlowMode.PER_TUPLE:
        return _NEVER
    if s is Schema.PERM_FLOW_ID3 or s is Schema.PERM_FLOW_DS3:
        cls = Id3 if s is Schema.PERM_FLOW_ID3 else Ds3
        id2, perm, x, id1 = p
        return Precondition(edges(id2, id1, cls(id2, perm, x)),
                            frozenset({cls(id1, perm, x)}), ((id1, id2),))
    if s is Schema.PERM_FLOW_ID4 or s is Schema.PERM_FLOW_DS4:
        cls4 = Id4 if s is Schema.PERM_FLOW_ID4 else Ds4
        id1, id2, a, perm, b = p
        return Precondition(edges(id2, id1, cls4(id2, a, perm, b)),
                            frozenset({cls4(id1, a, perm, b)}), ((id1, id2),))
    if s is Schema.ADD_ID3 or s is Schema.ADD_DS3:
        cls3, cls4 = (Id3, Id4) if s is Schema.ADD_ID3 else (Ds3, Ds4)
        id1, id2, perm, x = p
        if id2 in vocab.SENTINELS:
            return _NEVER
        base = {SELECTED, compromised_atom(id1)}
        variants = [frozenset(base | {cls4(id1, id2, perm, x)})]
        if id1 == id2:
            # the holder stands in for an any_user subject
            variants.append(frozenset(base | {cls4(id1, au, perm, x)}))
        return Precondition(tuple(variants), frozenset({cls3(id2, perm, x)}))
    if s is Schema.ACTIVATE_ID3 or s is Schema.ACTIVATE_DS3:
        is_id = s is Schema.ACTIVATE_ID3
        cls3 = Id3 if is_id else Ds3
        sentinel = au if is_id else ad
        id1, perm, x = p
        family = Family.IDENTITY if is_id else Family.DATASTORE
        if x in vocab.SENTINELS or perm not in domain.tokens(family):
            return _NEVER
        kind_fact = Fact(IDENTITY_PRED if is_id else DATASTORE_PRED, x)
        base = {SELECTED, compromised_atom(id1), kind_fact}
        variants = tuple(
            frozenset(base | {t})
            for t in (cls3(id1, fc, x), cls3(id1, fc, sentinel), cls3(id1, perm, sentinel))
        )
        return Precondition(variants, frozenset({cls3(id1, perm, x)}))

    # attack schemas
    ident = p[0]
    base = frozenset({SELECTED, compromised_atom(ident)})
    if s is Schema.COPY_OBJECT:
        _, ds1, ds2 = p
        return Precondition(
            tuple(
                base | {Fact(SENSITIVE, ds1), Fact(PUBLIC, ds2), Ds3(ident, r, ds1),
                        Ds3(ident, vocab.S3_PUT, ds2)}
                for r in (vocab.S3_GET, vocab.S3_COPY)
            ),
            frozenset({Fact(DUMMY_DS, ds1), Fact(DUMMY_DS, ds2)}),
            ((ds1, ds2),),
        )
    if s is Schema.MOVE_OBJECT:
        _, ds1, ds2 = p
        return Precondition(
            (base | {Fact(SENSITIVE, ds1), Ds3(ident, vocab.S3_GET, ds1),
                     Ds3(ident, vocab.S3_DELETE_OBJECT, ds1), Ds3(ident, vocab.S3_PUT, ds2)},),
            frozenset({Fact(DUMMY_DS, ds1), Fact(DUMMY_DS, ds2)}),
            ((ds1, ds2),),
        )
    if s is Schema.DELETE_BUCKET:
        ds = p[1]
        return Precondition(
            (base | {Fact(SENSITIVE, ds), Ds3(ident, vocab.DELETE_BUCKET, ds)},),
            frozenset({Fact(DUMMY_DS, ds)}),
        )
    if s is Schema.DELETE_IDENTITY:
        # Delete* rows of the API table over a user, group, role or policy
        _, perm, target = p
        if perm not in vocab.IDENTITY_DELETE_TOKENS or target in vocab.RESERVED_NAMES:
            return _NEVER
        return Precondition((base | {Id3(ident, perm, target)},))
    if s is Schema.CREATE_PUBLIC_BUCKET:
        ds = p[1]
        return Precondition(
            tuple(base | {Fact(DUMMY_DS, ds), Ds3(ident, t, ds)}
                  for t in sorted(vocab.CREATE_BUCKET_TOKENS)),
        )
    if s is Schema.ENCRYPT_SENSITIVE_DATA:
        _, ds, key = p
        return Precondition(
            (base | {Fact(SENSITIVE, ds), Ds3(ident, vocab.S3_PUT, ds),
                     Ds3(ident, vocab.KMS_CREATE_KEY, key)},),
            frozenset({Fact(VERSIONING, ds), Fact(MFA, ds), Fact(DUMMY_DS, ds)}),
        )
    if s is Schema.GAIN_PERSISTENCE:
        # gainPersistenceAction rows (iam:CreateUser, lambda/ec2/ssm ...)
        _, perm, target = p
        if perm not in vocab.PERSISTENCE_TOKENS:
            return _NEVER
        return Precondition((base | {Id3(ident, perm, target)},))
    if s is Schema.CHANGE_USER_LOGIN:
        # changeUserLogin rows (CreateLoginProfile, ChangePassword) on another user
        _, perm, user = p
        if perm not in vocab.LOGIN_TOKENS:
            return _NEVER
        return Precondition((base | {Fact(USER_PRED, user), Id3(ident, perm, user)},),
                            distinct=((ident, user),))
    if s is Schema.REACH_ADMIN_POLICY:
        return Precondition((base | {Id3(ident, vocab.HAS_POLICY, vocab.ADMIN_POLICY)},))
    if s is Schema.ENABLE_ATTACK:
        if not isinstance(goal, CustomGoal) or goal.name != p[1]:
            return _NEVER
        return Precondition((base | set(goal.required_tuples(ident)),))
    raise AssertionError(s)


def is_applicable(state: IamState, action: GroundAction, domain: Domain = DEFAULT_DOMAIN,
                  goal: Goal | None = None) -> bool:
    pre = precondition(action, domain, goal)
    if any(a == b for a, b in pre.distinct):
        return False
    if any(holds(state, n) for n in pre.negatives):
        return False
    if not any(all(holds(state, a) for a in v) for v in pre.variants):
        return False
    if action.schema in FLOW_SCHEMAS:
        src, dst = _flow_ends(action)
        return _binding_ok(state, src, dst, domain)
    return True


# --------------------------------------------------------------------------- effects


@dataclass
class Delta:
    adds: set[Atom] = field(default_factory=set)
    dels: set[Atom] = field(default_factory=set)
    bind: tuple[str, str] | None = None
    created: set[str] = field(default_factory=set)


def effects(state: IamState, action: GroundAction, domain: Domain = DEFAULT_DOMAIN) -> Delta:
    s, p = action.schema, action.params
    d = Delta()
    if s is Schema.SELECT_COMPROMISED_USER:
        d.adds.add(compromised_atom(p[0]))
        return d
    if s in FLOW_SCHEMAS:
        src, dst = _flow_ends(action)
        if s is Schema.PERM_FLOW_BULK:
            d.adds |= {t.with_holder(dst) for t in state.tuples if t.holder == src}
        elif s is Schema.PERM_FLOW_ID3:
            d.adds.add(Id3(dst, p[1], p[2]))
        elif s is Schema.PERM_FLOW_DS3:
            d.adds.add(Ds3(dst, p[1], p[2]))
        elif s is Schema.PERM_FLOW_ID4:
            d.adds.add(Id4(dst, p[2], p[3], p[4]))
        else:
            d.adds.add(Ds4(dst, p[2], p[3], p[4]))
        if (domain.constraint is AssumeConstraint.SINGLE_SOURCE
                and _assume_only(state, src, dst, domain.flow_perms)):
            d.bind = (dst, src)
        return d
    if s is Schema.ADD_ID3:
        d.adds.add(Id3(p[1], p[2], p[3]))
    elif s is Schema.ADD_DS3:
        d.adds.add(Ds3(p[1], p[2], p[3]))
    elif s is Schema.ACTIVATE_ID3:
        d.adds.add(Id3(*p))
    elif s is Schema.ACTIVATE_DS3:
        d.adds.add(Ds3(*p))
    elif s is Schema.COPY_OBJECT:
        d.adds.add(flag_atom(AttackType.SENSITIVE_DATA_EXFILTRATION.value))
    elif s is Schema.MOVE_OBJECT:
        _, ds1, ds2 = p
        d.adds.add(Fact(SENSITIVE, ds2))
        d.dels.add(Fact(SENSITIVE, ds1))
        if Fact(PUBLIC, ds2) in state.facts:
            d.adds.add(flag_atom(AttackType.SENSITIVE_DATA_EXFILTRATION.value))
    elif s is Schema.DELETE_BUCKET or s is Schema.DELETE_IDENTITY:
        d.adds.add(flag_atom(AttackType.IMPACT.value))
    elif s is Schema.CREATE_PUBLIC_BUCKET:
        ident, ds = p
        d.dels.add(Fact(DUMMY_DS, ds))
        d.adds |= {Fact(PUBLIC, ds), Ds3(ident, vocab.S3_PUT, ds)}
        d.created.add(ds)
    elif s is Schema.ENCRYPT_SENSITIVE_DATA:
        d.adds.add(flag_atom(AttackType.RANSOMWARE.value))
    elif s is Schema.GAIN_PERSISTENCE:
        d.adds.add(flag_atom(AttackType.PERSISTENCE.value))
        d.created.add(vocab.DUMMY_USER)
    elif s is Schema.CHANGE_USER_LOGIN:
        d.adds.add(flag_atom(AttackType.LATERAL_MOVEMENT.value))
    elif s is Schema.REACH_ADMIN_POLICY:
        d.adds.add(flag_atom(AttackType.PRIVILEGE_ESCALATION.value))
    elif s is Schema.ENABLE_ATTACK:
        d.adds.add(flag_atom(p[1]))
    return d


def apply(state: IamState, action: GroundAction, domain: Domain | FlowMode | None = None,
          goal: Goal | None = None, *, check: bool = True) -> IamState:
    """Successor state.  Raises ContractError if the action is not applicable."""
    domain = as_domain(domain)
    if check and not is_applicable(state, action, domain, goal):
        raise ContractError(f"{action} is not applicable")
    d = effects(state, action, domain)
    tuples = state.tuples
    new_t = {a for a in d.adds if isinstance(a, RelTuple)} - tuples
    del_t = {a for a in d.dels if isinstance(a, RelTuple)} & tuples
    if new_t or del_t:
        tuples = (tuples - del_t) | new_t
    facts = state.facts
    add_f = {a for a in d.adds if isinstance(a, Fact) and a.pred not in (COMPROMISED, ATTACK)}
    del_f = {a for a in d.dels if isinstance(a, Fact)}
    if add_f or del_f:
        facts = (facts - del_f) | add_f
    compromised = state.compromised | {a.arg for a in d.adds
                                       if isinstance(a, Fact) and a.pred == COMPROMISED}
    flags = state.attack_flags | {a.arg for a in d.adds if isinstance(a, Fact) and a.pred == ATTACK}
    bound = state.flow_bound | {d.bind} if d.bind else state.flow_bound
    created = state.created_entities | d.created if d.created else state.created_entities
    return IamState(tuples=tuples, compromised=compromised, flow_bound=bound,
                    attack_flags=flags, created_entities=created, facts=facts)


# --------------------------------------------------------------------------- successor generation


def _index(state: IamState) -> dict[str, list[RelTuple]]:
    idx: dict[str, list[RelTuple]] = defaultdict(list)
    for t in state.tuples:
        idx[t.holder].append(t)
    return idx


def relevant_schemas(goal: Goal | None) -> frozenset[Schema]:
    if goal is None:
        return ATTACK_SCHEMA_SET
    if isinstance(goal, CustomGoal):
        return frozenset({Schema.ENABLE_ATTACK})
    return frozenset(ATTACK_SCHEMAS[goal])


def applicable_actions(state: IamState, mode: FlowMode | Domain | None, goal: Goal | None,
                       *, relaxed: bool = False) -> Iterator[GroundAction]:
    """Applicable ground actions in (schema, params) order.

    Attack schemas that cannot reach ``goal`` are left out.  With
    ``relaxed`` every negative precondition, the single-source binding and
    the select-once rule are ignored (used by the attack graph).
    """
    domain = as_domain(mode)
    out: set[GroundAction] = set()
    users = state.entities_with(USER_PRED)
    if relaxed or not state.compromised:
        out |= {act(Schema.SELECT_COMPROMISED_USER, u) for u in users}
    if not state.compromised:
        yield from sorted(out)
        return
    tuples = state.tuples
    idx = _index(state)
    flow_perms = set(domain.flow_perms)

    def bind_ok(src: str, dst: str) -> bool:
        return relaxed or _binding_ok(state, src, dst, domain)

    # permission flows along active edges
    edges = sorted({
        (t.dst, t.src) for t in tuples
        if type(t) is Id3 and t.perm in flow_perms and t.src != t.dst
        and t.src not in vocab.SENTINELS and t.dst not in vocab.SENTINELS
    })
    for src, dst in edges:
        if not bind_ok(src, dst):
            continue
        if domain.mode is FlowMode.BULK:
            out.add(act(Schema.PERM_FLOW_BULK, src, dst))
            continue
        for t in idx.get(src, ()):
            moved = t.with_holder(dst)
            if not relaxed and moved in tuples:
                continue
            kind = type(t)
            if kind is Id3:
                out.add(act(Schema.PERM_FLOW_ID3, src, t.perm, t.dst, dst))
            elif kind is Ds3:
                out.add(act(Schema.PERM_FLOW_DS3, src, t.perm, t.ds, dst))
            elif kind is Id4:
                out.add(act(Schema.PERM_FLOW_ID4, dst, src, t.subj, t.perm, t.dst))
            else:
                out.add(act(Schema.PERM_FLOW_DS4, dst, src, t.subj, t.perm, t.ds))

    identities = [i for i in state.identities() if i not in vocab.SENTINELS]
    datastores = state.entities_with(DATASTORE_PRED)
    id_tokens = domain.tokens(Family.IDENTITY)
    ds_tokens = domain.tokens(Family.DATASTORE)
    wanted = relevant_schemas(goal)
    facts = state.facts

    for ident in sorted(state.compromised):
        mine = idx.get(ident, ())
        for t in mine:
            kind = type(t)
            # tuple addition through 4-tuples held by a compromised identity
            if kind is Id4 or kind is Ds4:
                subj = ident if t.subj == vocab.ANY_USER else t.subj
                if subj in vocab.SENTINELS:
                    continue
                new = (Id3 if kind is Id4 else Ds3)(subj, t.perm, t[-1])
                if relaxed or new not in tuples:
                    schema = Schema.ADD_ID3 if kind is Id4 else Schema.ADD_DS3
                    out.add(act(schema, ident, subj, t.perm, t[-1]))
                continue
            # wildcard activation
            target, perm = t[-1], t.perm
            if perm != vocab.FULL_CONTROL and target not in vocab.SENTINELS:
                continue
            if kind is Id3:
                perms = id_tokens if perm == vocab.FULL_CONTROL else (perm,)
                targets = identities if target == vocab.ANY_USER else (
                    () if target in vocab.SENTINELS else (target,))
                schema, cls = Schema.ACTIVATE_ID3, Id3
            else:
                perms = ds_tokens if perm == vocab.FULL_CONTROL else (perm,)
                targets = datastores if target == vocab.ANY_DATASTORE else (
                    () if target in vocab.SENTINELS else (target,))
                schema, cls = Schema.ACTIVATE_DS3, Ds3
            for p in perms:
                for x in targets:
                    if relaxed or cls(ident, p, x) not in tuples:
                        out.add(act(schema, ident, p, x))
        out |= _attack_actions(state, ident, mine, wanted, goal, datastores, relaxed)
    yield from sorted(out)


def _attack_actions(state: IamState, ident: str, mine: Iterable[RelTuple],
                    wanted: frozenset[Schema], goal: Goal | None, datastores: list[str],
                    relaxed: bool) -> set[GroundAction]:
    out: set[GroundAction] = set()
    facts = state.facts
    ds_perms: dict[str, set[str]] = defaultdict(set)
    id_tuples: list[Id3] = []
    for t in mine:
        if type(t) is Ds3:
            ds_perms[t.ds].add(t.perm)
        elif type(t) is Id3:
            id_tuples.append(t)

    def dummy(ds: str) -> bool:
        return not relaxed and Fact(DUMMY_DS, ds) in facts

    def sensitive(ds: str) -> bool:
        return Fact(SENSITIVE, ds) in facts

    if Schema.COPY_OBJECT in wanted or Schema.MOVE_OBJECT in wanted:
        puts = [ds for ds, ps in ds_perms.items() if vocab.S3_PUT in ps and not dummy(ds)]
        for ds1, ps in ds_perms.items():
            if not sensitive(ds1) or dummy(ds1):
                continue
            if Schema.COPY_OBJECT in wanted and (vocab.S3_GET in ps or vocab.S3_COPY in ps):
                for ds2 in puts:
                    if ds2 != ds1 and Fact(PUBLIC, ds2) in facts:
                        out.add(act(Schema.COPY_OBJECT, ident, ds1, ds2))
            if (Schema.MOVE_OBJECT in wanted and vocab.S3_GET in ps
                    and vocab.S3_DELETE_OBJECT in ps):
                for ds2 in puts:
                    if ds2 != ds1:
                        out.add(act(Schema.MOVE_OBJECT, ident, ds1, ds2))
    if Schema.CREATE_PUBLIC_BUCKET in wanted:
        for ds, ps in ds_perms.items():
            if Fact(DUMMY_DS, ds) in facts and ps & vocab.CREATE_BUCKET_TOKENS:
                out.add(act(Schema.CREATE_PUBLIC_BUCKET, ident, ds))
    if Schema.DELETE_BUCKET in wanted:
        for ds, ps in ds_perms.items():
            if vocab.DELETE_BUCKET in ps and sensitive(ds) and not dummy(ds):
                out.add(act(Schema.DELETE_BUCKET, ident, ds))
    if Schema.ENCRYPT_SENSITIVE_DATA in wanted:
        keys = sorted(ds for ds, ps in ds_perms.items() if vocab.KMS_CREATE_KEY in ps)
        if keys:
            for ds, ps in ds_perms.items():
                if vocab.S3_PUT not in ps or not sensitive(ds) or dummy(ds):
                    continue
                if not relaxed and (Fact(VERSIONING, ds) in facts or Fact(MFA, ds) in facts):
                    continue
                for key in keys:
                    out.add(act(Schema.ENCRYPT_SENSITIVE_DATA, ident, ds, key))
    for t in id_tuples:
        if Schema.DELETE_IDENTITY in wanted and t.perm in vocab.IDENTITY_DELETE_TOKENS \
                and t.dst not in vocab.RESERVED_NAMES:
            out.add(act(Schema.DELETE_IDENTITY, ident, t.perm, t.dst))
        if Schema.GAIN_PERSISTENCE in wanted and t.perm in vocab.PERSISTENCE_TOKENS:
            out.add(act(Schema.GAIN_PERSISTENCE, ident, t.perm, t.dst))
        if Schema.CHANGE_USER_LOGIN in wanted and t.perm in vocab.LOGIN_TOKENS \
                and t.dst != ident and Fact(USER_PRED, t.dst) in facts:
            out.add(act(Schema.CHANGE_USER_LOGIN, ident, t.perm, t.dst))
        if Schema.REACH_ADMIN_POLICY in wanted and t.perm == vocab.HAS_POLICY \
                and t.dst == vocab.ADMIN_POLICY:
            out.add(act(Schema.REACH_ADMIN_POLICY, ident))
    if Schema.ENABLE_ATTACK in wanted and isinstance(goal, CustomGoal):
        if all(r in state.tuples for r in goal.required_tuples(ident)):
            out.add(act(Schema.ENABLE_ATTACK, ident, goal.name))
    return out


def attack_precondition(state: IamState, ident: str, attack: Goal,
                        domain: Domain = DEFAULT_DOMAIN) -> bool:
    """Whether ``ident`` can execute an action that sets the ``attack`` flag now."""
    if ident not in state.compromised:
        return False
    flag = flag_atom(goal_flag(attack))
    mine = [t for t in state.tuples if t.holder == ident]
    datastores = state.entities_with(DATASTORE_PRED)
    for a in _attack_actions(state, ident, mine, relevant_schemas(attack), attack, datastores, False):
        if flag in effects(state, a, domain).adds:
            return True
    return False


def goal_satisfied(state: IamState, goal: Goal) -> bool:
    return goal_flag(goal) in state.attack_flags


def precompromise(state: IamState, *names: str) -> IamState:
    return replace(state, compromised=state.compromised | set(names))
