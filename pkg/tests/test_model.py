import pytest
from hypothesis import given
from hypothesis import strategies as st

from cloudlens import vocab
from cloudlens.model import (
    AttackType,
    Ds3,
    Ds4,
    IamState,
    Id3,
    Id4,
    TupleParseError,
    format_tuple_line,
    parse_attack,
    parse_tuple_line,
    read_tuples,
    state_contains,
    state_insert,
    write_tuples,
)

names = st.sampled_from(["u1", "g1", "r1", "ds1", "user_9", "role_10", "any_user"])
id_tokens = st.sampled_from(sorted(vocab.IDENTITY_TOKENS))
ds_tokens = st.sampled_from(sorted(vocab.DATASTORE_TOKENS))
stores = st.sampled_from(["ds1", "data_store_71", "any_datastore"])

tuples = st.one_of(
    st.builds(Id3, names, id_tokens, names),
    st.builds(Ds3, names, ds_tokens, stores),
    st.builds(Id4, names, names, id_tokens, names),
    st.builds(Ds4, names, names, ds_tokens, stores),
)


def test_insert_into_empty_state():
    t = Id3("u1", "belongsTo", "g1")
    s = state_insert(IamState(), t)
    assert s.tuples == {t}
    assert state_contains(s, t)


def test_contains_is_exact():
    s = state_insert(IamState(), Id3("u1", "belongsTo", "g1"))
    assert not state_contains(s, Id3("u1", "belongsTo", "g2"))
    assert not state_contains(IamState(), Id3("u1", "belongsTo", "g1"))


@given(tuples, tuples)
def test_insert_idempotent(a, b):
    s = state_insert(state_insert(IamState(), a), b)
    assert state_insert(s, a) == s
    assert state_insert(state_insert(s, b), b) == state_insert(s, b)


@given(st.lists(tuples, max_size=6))
def test_equal_states_hash_equal(ts):
    a = IamState()
    for t in ts:
        a = state_insert(a, t)
    b = IamState()
    for t in reversed(ts):
        b = state_insert(b, t)
    assert a == b and hash(a) == hash(b)


def test_parse_id3_line():
    assert parse_tuple_line("(id3 u1 belongsTo g1)") == Id3("u1", "belongsTo", "g1")


def test_parse_normalizes_case_and_api_names():
    assert parse_tuple_line("( ds3  u1  S3_getobject ds1 )") == Ds3("u1", "s3_GetObject", "ds1")
    assert format_tuple_line(parse_tuple_line("(ds3 u1 S3_getobject ds1)")) == \
        "(ds3 u1 s3_GetObject ds1)"


@pytest.mark.parametrize("line", [
    "(ds4 id GID hasPolicy PID)",          # identity permission in a datastore form
    "(id3 u1 s3_GetObject ds1)",           # datastore permission in an identity form
    "(id3 u1 belongsTo)",
    "(id5 a b c)",
    "(id3 u1 notAPermission g1)",
    "id3 u1 belongsTo g1",
    "(ds3 u1 s3_GetObject any_user)",
])
def test_parse_rejects(line):
    with pytest.raises(TupleParseError):
        parse_tuple_line(line)


@given(tuples)
def test_format_parse_roundtrip(t):
    assert parse_tuple_line(format_tuple_line(t)) == t


def test_read_reports_line_number():
    with pytest.raises(TupleParseError) as err:
        read_tuples("# header\n(id3 u1 belongsTo g1)\n(id3 u1 bogus g1)\n")
    assert err.value.lineno == 3


@given(st.lists(tuples, max_size=8))
def test_write_read_roundtrip(ts):
    assert set(read_tuples(write_tuples(ts))) == set(ts)


def test_parse_attack_aliases():
    assert parse_attack("Impact") is AttackType.IMPACT
    assert parse_attack("PrivilegeEscalation") is AttackType.PRIVILEGE_ESCALATION
    assert parse_attack("exfiltration") is AttackType.SENSITIVE_DATA_EXFILTRATION
    with pytest.raises(ValueError):
        parse_attack("phishing")


def test_vocab_canonical_tokens():
    assert vocab.canonical_token("s3:GetObject") == "s3_GetObject"
    assert vocab.canonical_token("sts:AssumeRole") == vocab.ASSUME_ROLE
    with pytest.raises(KeyError):
        vocab.canonical_token("s3:NoSuchThing")
