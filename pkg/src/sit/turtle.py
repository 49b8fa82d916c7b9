"""Minimal RDF Turtle writer and reader for the container metadata store.

The dialect covers prefix declarations, IRIs, prefixed names, the ``a``
keyword, quoted literals with optional datatype, and ``;``/``,`` lists.
Blank nodes, collections, long strings and numeric shorthands are not
supported.
"""

import re
from dataclasses import dataclass
from typing import Union

from sit.errors import SitError

AFF4 = "http://aff4.org/Schema#"
RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
XSD = "http://www.w3.org/2001/XMLSchema#"

PREFIXES = (("aff4", AFF4), ("rdf", RDF), ("xsd", XSD))

RDF_TYPE = RDF + "type"
XSD_STRING = XSD + "string"
XSD_LONG = XSD + "long"
XSD_DATETIME = XSD + "dateTime"
ALLOWED_DATATYPES = frozenset({XSD_STRING, XSD_LONG, XSD_DATETIME})

# Predicate order inside a subject block.
PREDICATE_ORDER = (
    RDF_TYPE,
    AFF4 + "originalFileName",
    AFF4 + "size",
    AFF4 + "MD5",
    AFF4 + "SHA1",
    AFF4 + "SHA256",
    AFF4 + "birthTime",
    AFF4 + "lastWritten",
    AFF4 + "mftChanged",
    AFF4 + "lastAccessed",
    AFF4 + "acquisitionTime",
    AFF4 + "storedIn",
)
_PREDICATE_RANK = {p: i for i, p in enumerate(PREDICATE_ORDER)}


class TurtleError(SitError):
    pass


class TurtleSyntaxError(TurtleError):
    def __init__(self, message, line):
        super().__init__("line %d: %s" % (line, message))
        self.line = line


class UnknownPrefix(TurtleSyntaxError):
    pass


@dataclass(frozen=True, order=True)
class IRI:
    value: str


@dataclass(frozen=True, order=True)
class Literal:
    lexical: str
    datatype: str = XSD_STRING


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: Union[IRI, Literal]

    def __post_init__(self):
        if not self.subject.startswith("aff4://"):
            raise ValueError("subject must be an aff4:// URN: %r" % self.subject)
        if isinstance(self.object, Literal) and self.object.datatype not in ALLOWED_DATATYPES:
            raise ValueError("unsupported datatype %r" % self.object.datatype)


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_ESCAPE_RE = re.compile(r'[\\"\n\t\r]')


def escape_string(text):
    return _ESCAPE_RE.sub(lambda m: _ESCAPES[m.group()], text)


def _term(iri):
    for prefix, ns in PREFIXES:
        if iri.startswith(ns):
            local = iri[len(ns):]
            if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_\-]*", local):
                return "%s:%s" % (prefix, local)
    return "<%s>" % iri


def _object_text(obj):
    if isinstance(obj, IRI):
        return _term(obj.value)
    return '"%s"^^%s' % (escape_string(obj.lexical), _term(obj.datatype))


def _object_key(obj):
    if isinstance(obj, IRI):
        return (0, obj.value, "")
    return (1, obj.lexical, obj.datatype)


def serialize_turtle(triples):
    """Render triples deterministically: subjects ascending, predicates in block order."""
    lines = ["@prefix %s: <%s> ." % p for p in PREFIXES]
    by_subject = {}
    for t in set(triples):
        by_subject.setdefault(t.subject, []).append(t)
    for subject in sorted(by_subject):
        block = sorted(by_subject[subject], key=lambda t: (
            _PREDICATE_RANK.get(t.predicate, len(PREDICATE_ORDER)), t.predicate, _object_key(t.object)))
        lines.append("")
        lines.append("<%s>" % subject)
        for i, t in enumerate(block):
            end = " ." if i == len(block) - 1 else " ;"
            lines.append("    %s %s%s" % (_term(t.predicate), _object_text(t.object), end))
    return "\n".join(lines) + "\n"


# -- parsing --------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<prefix>@prefix\b)
  | (?P<iri><[^<>"{}|^`\\\x00-\x20]*>)
  | (?P<string>"(?:[^"\\\n\r]|\\.)*")
  | (?P<dtype>\^\^)
  | (?P<lang>@[A-Za-z]+(?:-[A-Za-z0-9]+)*)
  | (?P<pname>[A-Za-z][A-Za-z0-9_\-]*:[A-Za-z0-9_\-]*|:[A-Za-z0-9_\-]*)
  | (?P<a>a(?=[\s<"]))
  | (?P<punct>[.;,])
""", re.VERBOSE)

_UNESCAPES = {"t": "\t", "n": "\n", "r": "\r", "b": "\b", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


def _unescape(body, line):
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        nxt = body[i + 1]
        if nxt in _UNESCAPES:
            out.append(_UNESCAPES[nxt])
            i += 2
        elif nxt in "uU":
            width = 4 if nxt == "u" else 8
            digits = body[i + 2:i + 2 + width]
            if len(digits) != width or not re.fullmatch(r"[0-9A-Fa-f]+", digits):
                raise TurtleSyntaxError("bad \\%s escape" % nxt, line)
            out.append(chr(int(digits, 16)))
            i += 2 + width
        else:
            raise TurtleSyntaxError("unknown escape \\%s" % nxt, line)
    return "".join(out)


def _tokenize(text):
    line = 1
    last = 1  # line of the last real token; end of input is reported there
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise TurtleSyntaxError("unexpected character %r" % text[pos], line)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
        elif kind not in ("ws", "comment"):
            last = line
            yield kind, m.group(), line
        pos = m.end()
    yield "eof", "", last


class _Parser:
    def __init__(self, text):
        self.tokens = list(_tokenize(text))
        self.pos = 0
        self.prefixes = {}
        self.triples = []

    def peek(self):
        return self.tokens[self.pos]

    def take(self, *kinds, value=None):
        kind, text, line = self.tokens[self.pos]
        if kind not in kinds or (value is not None and text != value):
            want = value or "/".join(kinds)
            if kind == "eof":
                raise TurtleSyntaxError("unexpected end of input, expected %s" % want, line)
            raise TurtleSyntaxError("expected %s, found %r" % (want, text), line)
        self.pos += 1
        return text, line

    def expand(self, pname, line):
        prefix, _, local = pname.partition(":")
        if prefix not in self.prefixes:
            raise UnknownPrefix("unknown prefix %r" % prefix, line)
        return self.prefixes[prefix] + local

    def iri(self):
        kind, text, line = self.peek()
        if kind == "iri":
            self.pos += 1
            return text[1:-1]
        if kind == "pname":
            self.pos += 1
            return self.expand(text, line)
        self.take("iri", "pname")

    def parse(self):
        while self.peek()[0] != "eof":
            if self.peek()[0] == "prefix":
                self.pos += 1
                name, line = self.take("pname")
                if not name.endswith(":"):
                    raise TurtleSyntaxError("bad prefix name %r" % name, line)
                iri, _ = self.take("iri")
                self.prefixes[name[:-1]] = iri[1:-1]
                self.take("punct", value=".")
            else:
                self.statement()
        return self.triples

    def statement(self):
        line = self.peek()[2]
        subject = self.iri()
        while True:
            if self.peek()[0] == "a":
                self.pos += 1
                predicate = RDF_TYPE
            else:
                predicate = self.iri()
            while True:
                obj = self.object()
                try:
                    self.triples.append(Triple(subject, predicate, obj))
                except ValueError as exc:
                    raise TurtleSyntaxError(str(exc), line) from None
                if self.peek()[1] == ",":
                    self.pos += 1
                    continue
                break
            sep, line = self.take("punct")
            if sep == ".":
                return
            if sep != ";":
                raise TurtleSyntaxError("expected ';' or '.', found %r" % sep, line)
            if self.peek()[1] == ".":
                self.pos += 1
                return

    def object(self):
        kind, text, line = self.peek()
        if kind == "string":
            self.pos += 1
            lexical = _unescape(text[1:-1], line)
            if self.peek()[0] == "dtype":
                self.pos += 1
                return Literal(lexical, self.iri())
            if self.peek()[0] == "lang":
                raise TurtleSyntaxError("language-tagged literals are not supported", line)
            return Literal(lexical, XSD_STRING)
        return IRI(self.iri())


def parse_turtle(text):
    """Parse Turtle text into a list of triples in document order."""
    return _Parser(text).parse()
