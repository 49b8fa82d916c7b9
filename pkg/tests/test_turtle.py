import string

import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from sit.turtle import (
    AFF4,
    RDF_TYPE,
    XSD_DATETIME,
    XSD_LONG,
    XSD_STRING,
    IRI,
    Literal,
    Triple,
    TurtleSyntaxError,
    UnknownPrefix,
    escape_string,
    parse_turtle,
    serialize_turtle,
)

PREFIX_LINES = (
    "@prefix aff4: <http://aff4.org/Schema#> .\n"
    "@prefix rdf: <http://www.w3.org/1999/02/22-rdf-syntax-ns#> .\n"
    "@prefix xsd: <http://www.w3.org/2001/XMLSchema#> .\n"
)
S1 = "aff4://00000000-0000-4000-8000-000000000001/artifact/000001"
S2 = "aff4://00000000-0000-4000-8000-000000000001/artifact/000002"


def test_empty():
    text = serialize_turtle([])
    assert text.startswith(PREFIX_LINES)
    assert text.strip() == PREFIX_LINES.strip()
    assert parse_turtle(text) == []


def test_backslash_escape():
    text = serialize_turtle([Triple(S1, AFF4 + "originalFileName", Literal("C:\\x"))])
    assert '"C:\\\\x"^^xsd:string' in text


def test_block_layout():
    triples = [Triple(S2, AFF4 + "size", Literal("5", XSD_LONG)),
               Triple(S1, AFF4 + "size", Literal("3", XSD_LONG)),
               Triple(S1, RDF_TYPE, IRI(AFF4 + "Image"))]
    text = serialize_turtle(triples)
    assert text == PREFIX_LINES + (
        "\n<%s>\n"
        "    rdf:type aff4:Image ;\n"
        '    aff4:size "3"^^xsd:long .\n'
        "\n<%s>\n"
        '    aff4:size "5"^^xsd:long .\n') % (S1, S2)


def test_escapes():
    assert escape_string('a\\b"c\nd\te') == 'a\\\\b\\"c\\nd\\te'


def test_unescape():
    text = PREFIX_LINES + '<%s> aff4:originalFileName "a\\"b" .\n' % S1
    (t,) = parse_turtle(text)
    assert t.object == Literal('a"b', XSD_STRING)


def test_extended_syntax_accepted():
    text = PREFIX_LINES + (
        "# comment\n"
        '<%s> a aff4:Image ; aff4:MD5 "x" , "y"^^<http://www.w3.org/2001/XMLSchema#string> ;\n'
        '  <http://aff4.org/Schema#note> "\\u00e9\\U0001F600" ; .\n') % S1
    triples = set(parse_turtle(text))
    assert triples == {
        Triple(S1, RDF_TYPE, IRI(AFF4 + "Image")),
        Triple(S1, AFF4 + "MD5", Literal("x")),
        Triple(S1, AFF4 + "MD5", Literal("y")),
        Triple(S1, AFF4 + "note", Literal("\u00e9\U0001F600")),
    }


def test_missing_terminator():
    text = PREFIX_LINES + '\n<%s>\n    aff4:size "3"^^xsd:long\n' % S1
    with pytest.raises(TurtleSyntaxError) as info:
        parse_turtle(text)
    assert info.value.line == 6


def test_unknown_prefix():
    with pytest.raises(UnknownPrefix) as info:
        parse_turtle('<%s> foaf:name "x" .' % S1)
    assert info.value.line == 1


@pytest.mark.parametrize("text", [
    '<%s> aff4:x "unterminated .' % S1,
    '<%s> aff4:x "a"@en .' % S1,
    '<%s> aff4:x "a"^^<http://example.org/int> .' % S1,
    '<http://example.org/s> <http://example.org/p> "a" .',
    '<%s> aff4:x "bad \\q escape" .' % S1,
])
def test_rejected(text):
    with pytest.raises(TurtleSyntaxError):
        parse_turtle(PREFIX_LINES + text)


def test_triple_invariants():
    with pytest.raises(ValueError):
        Triple("http://x", AFF4 + "size", Literal("1", XSD_LONG))
    with pytest.raises(ValueError):
        Triple(S1, AFF4 + "size", Literal("1", "http://www.w3.org/2001/XMLSchema#int"))


lexical = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)
subjects = st.builds(lambda u, i: "aff4://%s/artifact/%06d" % (u, i), st.uuids().map(str), st.integers(0, 999999))
predicates = st.sampled_from([RDF_TYPE, AFF4 + "originalFileName", AFF4 + "size", AFF4 + "MD5",
                              AFF4 + "acquisitionTime", AFF4 + "storedIn", AFF4 + "custom-thing"])
objects = st.one_of(
    st.builds(Literal, lexical, st.sampled_from([XSD_STRING, XSD_LONG, XSD_DATETIME])),
    st.builds(IRI, st.sampled_from([AFF4 + "Image", "aff4://00000000-0000-4000-8000-000000000001",
                                    "http://example.org/x#y"])),
)
triples_strategy = st.lists(st.builds(Triple, subjects, predicates, objects), max_size=30)


@settings(max_examples=300)
@given(triples_strategy)
def test_round_trip(triples):
    text = serialize_turtle(triples)
    assert set(parse_turtle(text)) == set(triples)


@given(triples_strategy, st.randoms())
def test_deterministic(triples, rnd):
    shuffled = list(triples)
    rnd.shuffle(shuffled)
    assert serialize_turtle(shuffled) == serialize_turtle(triples)


def test_printable_ascii_survives():
    t = Triple(S1, AFF4 + "originalFileName", Literal(string.printable))
    assert parse_turtle(serialize_turtle([t])) == [t]
