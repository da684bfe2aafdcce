import json

import pytest
from hypothesis import given, strategies as st

from premsel.ingest import (
    ADT, Application, Clause, Constructor, DeBruijn, DuplicateName, Function, Lambda, Level,
    Literal, Pi, Record, SchemaError, ScopeReference, Sort, collect_scope, decode_term,
    dump_file, encode_file, encode_term, parse_file, premise_violations, select_reduction,
    PTerm, TermPlus,
)

from conftest import entry, hole, ref


def test_decode_pi_over_debruijn():
    t = decode_term({"tag": "Pi", "name": "x", "domain": {"tag": "ScopeReference", "name": "ℕ"},
                     "codomain": {"tag": "DeBruijn", "index": 0}})
    assert t == Pi("x", ScopeReference("ℕ"), DeBruijn(0))


def test_application_without_arguments_names_its_path():
    bad = {"tag": "Pi", "name": "x", "domain": {"tag": "Sort"},
           "codomain": {"tag": "Application", "head": {"tag": "Sort"}, "arguments": []}}
    with pytest.raises(SchemaError) as e:
        decode_term(bad)
    assert e.value.path == "$.codomain.arguments"


def test_negative_index_rejected():
    with pytest.raises(SchemaError, match="negative"):
        decode_term({"tag": "DeBruijn", "index": -1})


@pytest.mark.parametrize("obj", [
    {"tag": "Lamda", "abstraction": "x", "body": {"tag": "Sort"}},
    {"tag": "DeBruijn", "index": True},
    {"tag": "DeBruijn", "index": "0"},
    {"tag": "Pi", "name": "x", "domain": {"tag": "Sort"}},
    [],
])
def test_malformed_terms(obj):
    with pytest.raises(SchemaError):
        decode_term(obj)


def test_nat_comm_sections_and_holes(nat_comm):
    items = collect_scope(nat_comm)
    assert [i.section for i in items] == ["global"] * 4 + ["local"] * 5 + ["private"]
    with_holes = {i.name: len(i.holes) for i in items if i.holes}
    assert with_holes == {"+-comm<20>": 4, "+-suc<38>": 2}
    assert premise_violations(nat_comm) == []


def test_section_order():
    from premsel.ingest import RawFile
    f = RawFile("F", (entry("g1", Sort()), entry("g2", Sort())),
                (entry("l1", Sort()), entry("l2", Sort()), entry("l3", Sort())),
                (entry("p1", Sort()),))
    assert [i.name for i in collect_scope(f)] == ["g1", "g2", "l1", "l2", "l3", "p1"]


def test_duplicate_names():
    from premsel.ingest import RawFile
    doc = encode_file(RawFile("F", scope_local=(entry("f<1>", Sort()),)))
    doc["scope-local"] *= 2
    with pytest.raises(DuplicateName):
        parse_file(json.dumps(doc))


def test_holes_on_imports_rejected():
    from premsel.ingest import RawFile
    doc = encode_file(RawFile("F", scope_local=(entry("g", Sort(), [hole(Sort())]),)))
    doc["scope-global"], doc["scope-local"] = doc["scope-local"], []
    with pytest.raises(SchemaError, match="global"):
        parse_file(json.dumps(doc))


def test_name_defaults_to_file_stem(tmp_path, tiny_file):
    doc = encode_file(tiny_file)
    del doc["name"]
    path = tmp_path / "Some.Module.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    from premsel.ingest import load_file
    assert load_file(path).name == "Some.Module"


def test_reduction_fallback():
    tp = TermPlus(PTerm("o", Sort("o")), reduced=PTerm("r", Sort("r")))
    assert select_reduction(tp, ("normalised", "reduced")) == Sort("r")
    assert select_reduction(tp, ("normalised",)) == Sort("o")
    with pytest.raises(ValueError):
        select_reduction(tp, ("bogus",))


def test_opaque_payloads_round_trip():
    for t in (Literal("3"), Sort("Set₁"), Level("ℓ"), Literal(None)):
        assert decode_term(encode_term(t)) == t


def test_file_round_trip(nat_comm):
    again = parse_file(dump_file(nat_comm))
    assert again == nat_comm
    assert dump_file(again) == dump_file(nat_comm)


# -- property: any generated term survives encode/decode ------------------------

names = st.text(alphabet="abcxyzℕ≡_+-′", min_size=1, max_size=6)
leaves = st.one_of(
    st.builds(DeBruijn, st.integers(0, 5)),
    st.builds(ScopeReference, names),
    st.builds(Sort, st.none() | names),
    st.builds(Level, st.none() | names),
    st.builds(Literal, st.none() | names),
    st.builds(Constructor, names, st.integers(0, 3)),
)


def _extend(children):
    tuples = st.lists(children, max_size=3).map(tuple)
    return st.one_of(
        st.builds(Pi, names, children, children),
        st.builds(Lambda, names, children),
        st.builds(Application, children, st.lists(children, min_size=1, max_size=3).map(tuple)),
        st.builds(ADT, tuples),
        st.builds(Record, tuples, tuples),
        st.builds(Function, st.lists(st.builds(Clause, tuples, tuples, children), max_size=2).map(tuple)),
    )


terms = st.recursive(leaves, _extend, max_leaves=20)


@given(terms)
def test_term_round_trip(term):
    assert decode_term(json.loads(json.dumps(encode_term(term)))) == term
