"""Relation tuples, entities and the immutable IAM state."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Mapping, NamedTuple

from cloudlens import vocab
from cloudlens.vocab import Family


class Kind(str, Enum):
    USER = "User"
    GROUP = "Group"
    ROLE = "Role"
    POLICY = "Policy"


class AttackType(str, Enum):
    SENSITIVE_DATA_EXFILTRATION = "sensitive_data_exfiltration"
    IMPACT = "impact"
    PERSISTENCE = "persistence"
    LATERAL_MOVEMENT = "lateral_movement"
    PRIVILEGE_ESCALATION = "privilege_escalation"
    RANSOMWARE = "ransomware"

    @property
    def label(self) -> str:
        return "".join(part.capitalize() for part in self.value.split("_"))


_ATTACK_ALIASES = {
    "exfiltration": AttackType.SENSITIVE_DATA_EXFILTRATION,
    "privesc": AttackType.PRIVILEGE_ESCALATION,
    "lateral": AttackType.LATERAL_MOVEMENT,
}


def parse_attack(text: str) -> AttackType:
    """Accept ``impact``, ``Impact``, ``PrivilegeEscalation`` or ``privilege_escalation``."""
    key = re.sub(r"[^a-z]", "", text.lower())
    for attack in AttackType:
        if key == attack.value.replace("_", ""):
            return attack
    if key in _ATTACK_ALIASES:
        return _ATTACK_ALIASES[key]
    raise ValueError(f"unknown attack type: {text!r}")


@dataclass(frozen=True, order=True)
class EntityId:
    name: str
    account: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("entity name must be non-empty")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Identity:
    id: EntityId
    kind: Kind

    @property
    def name(self) -> str:
        return self.id.name


@dataclass(frozen=True)
class Datastore:
    id: EntityId
    is_public: bool = False
    has_sensitive_data: bool = False
    versioning_enabled: bool = False
    mfa_delete_enabled: bool = False
    is_dummy: bool = False

    def __post_init__(self) -> None:
        if self.is_dummy and (self.is_public or self.has_sensitive_data):
            raise ValueError(f"dummy datastore {self.id.name} cannot start public or sensitive")

    @property
    def name(self) -> str:
        return self.id.name


# --------------------------------------------------------------------------- tuples


class RelTuple:
    """Base of the four tuple forms.  Entity slots hold entity names."""

    __slots__ = ()
    kind: str = ""

    @property
    def holder(self) -> str:
        return self[0]

    def fields(self) -> tuple[str, ...]:
        raise NotImplementedError

    def __getitem__(self, i: int) -> str:
        return self.fields()[i]

    def with_holder(self, holder: str) -> RelTuple:
        return type(self)(holder, *self.fields()[1:])

    @property
    def sort_key(self) -> tuple[str, ...]:
        return (self.kind, *self.fields())

    def __lt__(self, other: RelTuple) -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return format_tuple_line(self)


@dataclass(frozen=True, slots=True)
class Id3(RelTuple):
    src: str
    perm: str
    dst: str
    kind = "id3"

    def fields(self) -> tuple[str, ...]:
        return (self.src, self.perm, self.dst)


@dataclass(frozen=True, slots=True)
class Ds3(RelTuple):
    src: str
    perm: str
    ds: str
    kind = "ds3"

    def fields(self) -> tuple[str, ...]:
        return (self.src, self.perm, self.ds)


@dataclass(frozen=True, slots=True)
class Id4(RelTuple):
    actor: str
    subj: str
    perm: str
    dst: str
    kind = "id4"

    def fields(self) -> tuple[str, ...]:
        return (self.actor, self.subj, self.perm, self.dst)

    def added(self) -> Id3:
        return Id3(self.subj, self.perm, self.dst)


@dataclass(frozen=True, slots=True)
class Ds4(RelTuple):
    actor: str
    subj: str
    perm: str
    ds: str
    kind = "ds4"

    def fields(self) -> tuple[str, ...]:
        return (self.actor, self.subj, self.perm, self.ds)

    def added(self) -> Ds3:
        return Ds3(self.subj, self.perm, self.ds)


TUPLE_CLASSES: dict[str, type[RelTuple]] = {"id3": Id3, "ds3": Ds3, "id4": Id4, "ds4": Ds4}


class Fact(NamedTuple):
    """A unary status predicate such as ``has_sensitive_data(ds1)``."""

    pred: str
    arg: str


USER_PRED = "user_pred"
GROUP_PRED = "group_pred"
ROLE_PRED = "role_pred"
POLICY_PRED = "policy_pred"
DATASTORE_PRED = "datastore_pred"
IDENTITY_PRED = "identity_pred"
SENSITIVE = "has_sensitive_data"
PUBLIC = "is_public_datastore"
DUMMY_DS = "is_dummy_datastore"
DUMMY_USER = "is_dummy_user"
VERSIONING = "versioning_enabled"
MFA = "mfa_enabled"

KIND_PRED = {
    Kind.USER: USER_PRED,
    Kind.GROUP: GROUP_PRED,
    Kind.ROLE: ROLE_PRED,
    Kind.POLICY: POLICY_PRED,
}
IDENTITY_PREDS = frozenset(KIND_PRED.values())


# --------------------------------------------------------------------------- state


@dataclass(frozen=True)
class IamState:
    """One search node.  All fields are immutable; equality is structural."""

    tuples: frozenset[RelTuple] = frozenset()
    compromised: frozenset[str] = frozenset()
    flow_bound: frozenset[tuple[str, str]] = frozenset()  # (target, source)
    attack_flags: frozenset[str] = frozenset()
    created_entities: frozenset[str] = frozenset()
    facts: frozenset[Fact] = frozenset()

    def __contains__(self, item: object) -> bool:
        return item in self.tuples

    def bound_source(self, target: str) -> str | None:
        for tgt, src in self.flow_bound:
            if tgt == target:
                return src
        return None

    def has_fact(self, pred: str, arg: str) -> bool:
        return Fact(pred, arg) in self.facts

    def entities_with(self, pred: str) -> list[str]:
        return sorted(f.arg for f in self.facts if f.pred == pred)

    def identities(self) -> list[str]:
        return self.entities_with(IDENTITY_PRED)

    def add_tuples(self, new: Iterable[RelTuple]) -> IamState:
        merged = self.tuples.union(new)
        if len(merged) == len(self.tuples):
            return self
        return replace(self, tuples=merged)

    def sorted_tuples(self) -> list[RelTuple]:
        return sorted(self.tuples, key=lambda t: t.sort_key)


def state_insert(state: IamState, t: RelTuple) -> IamState:
    if t in state.tuples:
        return state
    return replace(state, tuples=state.tuples | {t})


def state_contains(state: IamState, t: RelTuple) -> bool:
    return t in state.tuples


# --------------------------------------------------------------------------- text format


class TupleParseError(ValueError):
    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


_DS_KINDS = ("ds3", "ds4")


def token_family(token: str, extra: Mapping[str, Family] | None = None) -> Family | None:
    """Family of a permission token, or None for ``full_control`` (fits either)."""
    if token == vocab.FULL_CONTROL:
        return None
    if extra and token in extra:
        return extra[token]
    if token in vocab.DATASTORE_TOKENS:
        return Family.DATASTORE
    if token in vocab.IDENTITY_TOKENS:
        return Family.IDENTITY
    raise KeyError(token)


def parse_tuple_line(
    line: str, lineno: int = 1, extra_tokens: Mapping[str, Family] | None = None
) -> RelTuple:
    text = line.strip()
    if not text.startswith("("):
        raise TupleParseError(lineno, f"expected '(' at start of {text!r}")
    if not text.endswith(")"):
        raise TupleParseError(lineno, "unterminated parenthesis")
    parts = text[1:-1].split()
    if not parts or parts[0].lower() not in TUPLE_CLASSES:
        raise TupleParseError(lineno, f"unknown tuple form in {text!r}")
    kind = parts[0].lower()
    args = parts[1:]
    arity = 3 if kind.endswith("3") else 4
    if len(args) != arity:
        raise TupleParseError(lineno, f"{kind} takes {arity} fields, got {len(args)}")
    if any("(" in a or ")" in a for a in args):
        raise TupleParseError(lineno, "nested parenthesis")
    perm_slot = 1 if arity == 3 else 2
    raw = args[perm_slot]
    if extra_tokens and raw in extra_tokens:
        perm = raw
    else:
        try:
            perm = vocab.canonical_token(raw)
        except KeyError:
            raise TupleParseError(lineno, f"unknown permission token {raw!r}") from None
    try:
        family = token_family(perm, extra_tokens)
    except KeyError:
        raise TupleParseError(lineno, f"{perm!r} cannot appear in a tuple") from None
    wants_ds = kind in _DS_KINDS
    if family is Family.DATASTORE and not wants_ds:
        raise TupleParseError(lineno, f"{perm} targets a datastore; use ds3/ds4")
    if family is Family.IDENTITY and wants_ds:
        raise TupleParseError(lineno, f"{perm} targets an identity, not a datastore slot")
    last = args[-1]
    if wants_ds and last == vocab.ANY_USER or not wants_ds and last == vocab.ANY_DATASTORE:
        raise TupleParseError(lineno, f"sentinel {last} in the wrong slot")
    args[perm_slot] = perm
    return TUPLE_CLASSES[kind](*args)


def format_tuple_line(t: RelTuple) -> str:
    return f"({t.kind} {' '.join(t.fields())})"


def read_tuples(
    text: str, extra_tokens: Mapping[str, Family] | None = None
) -> list[RelTuple]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        out.append(parse_tuple_line(stripped, lineno, extra_tokens))
    return out


def write_tuples(tuples: Iterable[RelTuple]) -> str:
    return "".join(format_tuple_line(t) + "\n" for t in sorted(tuples, key=lambda t: t.sort_key))


def iter_holders(tuples: Iterable[RelTuple], holder: str) -> Iterator[RelTuple]:
    return (t for t in tuples if t.holder == holder)
