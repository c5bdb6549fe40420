"""Closed permission vocabulary.

Every AWS API the model understands is listed here once, together with the
canonical token it compiles to and the role that token plays in the planning
domain.  Ingestion, planning and PDDL emission all read from this table.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from enum import Enum

ASSUME_ROLE = "assumeRole"
BELONGS_TO = "belongsTo"
HAS_POLICY = "hasPolicy"
FULL_CONTROL = "full_control"

STRUCTURAL = frozenset({ASSUME_ROLE, BELONGS_TO, HAS_POLICY})
FLOW_PERMISSIONS = (ASSUME_ROLE, BELONGS_TO, HAS_POLICY)

ANY_USER = "any_user"
ANY_DATASTORE = "any_datastore"
ADMIN_POLICY = "adminPolicy"
DUMMY_DATASTORE = "dummy_datastore"
DUMMY_USER = "dummy_user"
SENTINELS = frozenset({ANY_USER, ANY_DATASTORE})
RESERVED_NAMES = frozenset({ANY_USER, ANY_DATASTORE, ADMIN_POLICY, DUMMY_DATASTORE, DUMMY_USER})


class Family(Enum):
    IDENTITY = "identity"        # 3-tuple over an identity
    DATASTORE = "datastore"      # 3-tuple over a datastore
    IDENTITY_4TUPLE = "identity_4tuple"  # compiles to a 4-tuple


class Role(Enum):
    """What a token does in the planning domain (the PDDL column of the API table)."""

    NONE = "none"
    FLOW = "permissionFlow"
    TUPLE_4 = "identity_4tuple_pred"
    PERSISTENCE = "gainPersistenceAction"
    LOGIN = "changeUserLogin"
    IDENTITY_DELETE = "deleteIdentity"
    BUCKET_DELETE = "deleteBucket"
    READ = "read"
    WRITE = "write"
    OBJECT_DELETE = "objectDelete"
    COPY = "copyObject"
    CREATE_BUCKET = "createPublicBucket"
    ENCRYPT = "encryptSensitiveData"


@dataclass(frozen=True)
class ApiEntry:
    api: str              # "service:Api" as written in policies
    token: str            # canonical permission token
    family: Family
    role: Role
    target_kind: str      # kind of resource the API acts on
    # 4-tuple compilation: (relation, subject-from-resource?)
    relation: str | None = None


def _iam(api: str, role: Role, kind: str, relation: str | None = None) -> ApiEntry:
    family = Family.IDENTITY_4TUPLE if role is Role.TUPLE_4 else Family.IDENTITY
    return ApiEntry(f"iam:{api}", f"iam_{api}", family, role, kind, relation)


def _ds(api: str, token: str, role: Role, service: str = "s3") -> ApiEntry:
    return ApiEntry(f"{service}:{api}", token, Family.DATASTORE, role, "Datastore")


def _persist(service: str, api: str) -> ApiEntry:
    # compute/ssm resources are not modeled; these tokens target any_user
    return ApiEntry(f"{service}:{api}", f"{service}_{api}", Family.IDENTITY, Role.PERSISTENCE, "*")


API_TABLE: tuple[ApiEntry, ...] = (
    # IAM / User
    _iam("CreateUser", Role.PERSISTENCE, "User"),
    _iam("CreateLoginProfile", Role.LOGIN, "User"),
    _iam("UpdateLoginProfile", Role.PERSISTENCE, "User"),
    _iam("PutUserPolicy", Role.TUPLE_4, "User", HAS_POLICY),
    _iam("DeleteUserPolicy", Role.IDENTITY_DELETE, "User"),
    _iam("AttachUserPolicy", Role.TUPLE_4, "User", HAS_POLICY),
    _iam("DetachUserPolicy", Role.NONE, "User"),
    _iam("ChangePassword", Role.LOGIN, "User"),
    _iam("CreateAccessKey", Role.TUPLE_4, "User", ASSUME_ROLE),
    _iam("DeleteAccessKey", Role.IDENTITY_DELETE, "User"),
    _iam("UpdateAccessKey", Role.NONE, "User"),
    _iam("DeactivateMFADevice", Role.NONE, "User"),
    # IAM / Group
    _iam("DeleteGroup", Role.IDENTITY_DELETE, "Group"),
    _iam("PutGroupPolicy", Role.TUPLE_4, "Group", HAS_POLICY),
    _iam("AttachGroupPolicy", Role.TUPLE_4, "Group", HAS_POLICY),
    _iam("AddUserToGroup", Role.TUPLE_4, "Group", BELONGS_TO),
    _iam("RemoveUserFromGroup", Role.NONE, "Group"),
    # IAM / Role
    ApiEntry("sts:AssumeRole", ASSUME_ROLE, Family.IDENTITY, Role.FLOW, "Role"),
    _iam("UpdateAssumeRolePolicy", Role.TUPLE_4, "Role", ASSUME_ROLE),
    _iam("DeleteRole", Role.IDENTITY_DELETE, "Role"),
    _iam("PutRolePolicy", Role.TUPLE_4, "Role", HAS_POLICY),
    _iam("DeleteRolePolicy", Role.IDENTITY_DELETE, "Role"),
    _iam("AttachRolePolicy", Role.TUPLE_4, "Role", HAS_POLICY),
    _iam("DetachRolePolicy", Role.NONE, "Role"),
    # IAM / Policy
    _iam("DeletePolicy", Role.IDENTITY_DELETE, "Policy"),
    _iam("CreatePolicyVersion", Role.TUPLE_4, "Policy", HAS_POLICY),
    # Lambda, EC2, SSM
    _persist("lambda", "CreateFunction"),
    _persist("lambda", "UpdateFunctionCode"),
    _persist("ec2", "RunInstances"),
    _persist("ec2", "ModifyInstanceAttribute"),
    _persist("ssm", "SendCommand"),
    _persist("ssm", "StartSession"),
    # S3
    _ds("GetObject", "s3_GetObject", Role.READ),
    _ds("PutObject", "s3_PutObject", Role.WRITE),
    _ds("DeleteObject", "s3_DeleteObject", Role.OBJECT_DELETE),
    _ds("CopyObject", "s3_CopyObject", Role.COPY),
    _ds("CreateBucket", "s3_CreateBucket", Role.CREATE_BUCKET),
    _ds("DeleteBucket", "deleteBucket", Role.BUCKET_DELETE),
    _ds("PutBucketAcl", "s3_PutBucketAcl", Role.CREATE_BUCKET),
    # KMS
    _ds("CreateKey", "kms_CreateKey", Role.ENCRYPT, service="kms"),
)

BY_API: dict[str, ApiEntry] = {e.api.lower(): e for e in API_TABLE}
BY_TOKEN: dict[str, ApiEntry] = {e.token: e for e in API_TABLE}

IDENTITY_TOKENS = frozenset(
    e.token for e in API_TABLE if e.family is Family.IDENTITY
) | {BELONGS_TO, HAS_POLICY}
DATASTORE_TOKENS = frozenset(e.token for e in API_TABLE if e.family is Family.DATASTORE)
# tokens that may appear as the permission slot of a tuple
TUPLE_TOKENS = IDENTITY_TOKENS | DATASTORE_TOKENS | {FULL_CONTROL}
VOCABULARY = frozenset(BY_TOKEN) | STRUCTURAL | {FULL_CONTROL}

S3_GET = "s3_GetObject"
S3_PUT = "s3_PutObject"
S3_DELETE_OBJECT = "s3_DeleteObject"
S3_COPY = "s3_CopyObject"
DELETE_BUCKET = "deleteBucket"
KMS_CREATE_KEY = "kms_CreateKey"


def tokens_with_role(role: Role) -> frozenset[str]:
    return frozenset(e.token for e in API_TABLE if e.role is role)


PERSISTENCE_TOKENS = tokens_with_role(Role.PERSISTENCE)
LOGIN_TOKENS = tokens_with_role(Role.LOGIN)
IDENTITY_DELETE_TOKENS = tokens_with_role(Role.IDENTITY_DELETE)
CREATE_BUCKET_TOKENS = tokens_with_role(Role.CREATE_BUCKET)

_CANON = {t.lower(): t for t in VOCABULARY}


def canonical_token(text: str) -> str:
    """Map a token in any letter case (or an ``svc:Api`` name) to its canonical spelling.

    Raises KeyError for anything outside the vocabulary.
    """
    entry = BY_API.get(text.lower())
    if entry is not None:
        return entry.token
    return _CANON[text.lower()]


def match_actions(pattern: str) -> list[ApiEntry]:
    """All table entries whose ``svc:Api`` name matches a glob, case-insensitively."""
    pat = pattern.lower()
    return [e for e in API_TABLE if fnmatch.fnmatchcase(e.api.lower(), pat)]
