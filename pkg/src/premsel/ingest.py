"""Decoding of extracted Agda JSON files into typed term structures.

Every term object carries a ``tag`` naming one of twelve variants. Objects are
decoded recursively into frozen dataclasses; unknown fields are ignored so that
newer extractor versions still load.
"""

from __future__ import annotations

import json
from pathlib import Path
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence, Union

__all__ = [
    "IngestError",
    "SchemaError",
    "DuplicateName",
    "DeBruijn",
    "ScopeReference",
    "Pi",
    "Lambda",
    "Application",
    "ADT",
    "Constructor",
    "Record",
    "Function",
    "Clause",
    "Literal",
    "Sort",
    "Level",
    "RawTerm",
    "PTerm",
    "TermPlus",
    "ContextItem",
    "RawHole",
    "RawScopeEntry",
    "RawFile",
    "ScopeItem",
    "REDUCTION_LEVELS",
    "parse_file",
    "load_file",
    "decode_file",
    "encode_file",
    "dump_file",
    "select_reduction",
    "collect_scope",
    "premise_violations",
]


class IngestError(Exception):
    """Base class for problems with an input document."""


class SchemaError(IngestError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class DuplicateName(IngestError):
    def __init__(self, name: str):
        super().__init__(f"duplicate scope entry name {name!r}")
        self.name = name


# ---------------------------------------------------------------------------
# terms


@dataclass(frozen=True)
class DeBruijn:
    index: int


@dataclass(frozen=True)
class ScopeReference:
    name: str


@dataclass(frozen=True)
class Pi:
    name: str
    domain: RawTerm
    codomain: RawTerm


@dataclass(frozen=True)
class Lambda:
    abstraction: str
    body: RawTerm


@dataclass(frozen=True)
class Application:
    head: RawTerm
    arguments: tuple[RawTerm, ...]


@dataclass(frozen=True)
class ADT:
    variants: tuple[RawTerm, ...]


@dataclass(frozen=True)
class Constructor:
    reference: str
    variant: int


@dataclass(frozen=True)
class Record:
    context: tuple[RawTerm, ...]
    fields: tuple[RawTerm, ...]


@dataclass(frozen=True)
class Clause:
    ctx: tuple[RawTerm, ...]
    patterns: tuple[RawTerm, ...]
    body: RawTerm


@dataclass(frozen=True)
class Function:
    clauses: tuple[Clause, ...]


# Literals, sorts and levels are opaque: only an optional display string is kept.
@dataclass(frozen=True)
class Literal:
    value: str | None = None


@dataclass(frozen=True)
class Sort:
    value: str | None = None


@dataclass(frozen=True)
class Level:
    value: str | None = None


RawTerm = Union[
    DeBruijn, ScopeReference, Pi, Lambda, Application, ADT, Constructor,
    Record, Function, Literal, Sort, Level,
]


@dataclass(frozen=True)
class PTerm:
    pretty: str
    term: RawTerm


REDUCTION_LEVELS = ("original", "simplified", "reduced", "normalised")


@dataclass(frozen=True)
class TermPlus:
    original: PTerm
    simplified: PTerm | None = None
    reduced: PTerm | None = None
    normalised: PTerm | None = None


@dataclass(frozen=True)
class ContextItem:
    name: str
    pretty: str
    type: TermPlus


@dataclass(frozen=True)
class RawHole:
    context: tuple[ContextItem, ...]
    goal: TermPlus
    term: TermPlus
    premises: tuple[str, ...]


@dataclass(frozen=True)
class RawScopeEntry:
    name: str
    type: TermPlus
    definition: PTerm
    holes: tuple[RawHole, ...] = ()


@dataclass(frozen=True)
class RawFile:
    name: str
    scope_global: tuple[RawScopeEntry, ...] = ()
    scope_local: tuple[RawScopeEntry, ...] = ()
    scope_private: tuple[RawScopeEntry, ...] = ()

    def entries(self) -> Iterator[RawScopeEntry]:
        yield from self.scope_global
        yield from self.scope_local
        yield from self.scope_private


# ---------------------------------------------------------------------------
# decoding


def _field(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise SchemaError(path, f"missing field {key!r}")
    return obj[key]


def _expect(value: Any, kind: type | tuple, path: str, what: str) -> Any:
    # bool is an int subclass; never accept it where a number is expected
    if isinstance(value, bool) and kind in (int, (int, float)):
        raise SchemaError(path, f"expected {what}, got bool")
    if not isinstance(value, kind):
        raise SchemaError(path, f"expected {what}, got {type(value).__name__}")
    return value


def _str(obj: dict, key: str, path: str) -> str:
    return _expect(_field(obj, key, path), str, f"{path}.{key}", "string")


def _list(obj: dict, key: str, path: str) -> list:
    return _expect(_field(obj, key, path), list, f"{path}.{key}", "array")


def _terms(obj: dict, key: str, path: str) -> tuple[RawTerm, ...]:
    return tuple(
        decode_term(t, f"{path}.{key}[{i}]") for i, t in enumerate(_list(obj, key, path))
    )


def _opaque(obj: dict, key: str, path: str) -> str | None:
    value = obj.get(key)
    if value is None:
        return None
    return _expect(value, str, f"{path}.{key}", "string")


def decode_term(obj: Any, path: str = "$") -> RawTerm:
    _expect(obj, dict, path, "term object")
    tag = _str(obj, "tag", path)
    match tag:
        case "DeBruijn":
            index = _expect(_field(obj, "index", path), int, f"{path}.index", "integer")
            if index < 0:
                raise SchemaError(f"{path}.index", f"negative de Bruijn index {index}")
            return DeBruijn(index)
        case "ScopeReference":
            return ScopeReference(_str(obj, "name", path))
        case "Pi":
            return Pi(
                _str(obj, "name", path),
                decode_term(_field(obj, "domain", path), f"{path}.domain"),
                decode_term(_field(obj, "codomain", path), f"{path}.codomain"),
            )
        case "Lambda":
            return Lambda(
                _str(obj, "abstraction", path),
                decode_term(_field(obj, "body", path), f"{path}.body"),
            )
        case "Application":
            head = decode_term(_field(obj, "head", path), f"{path}.head")
            arguments = _terms(obj, "arguments", path)
            if not arguments:
                raise SchemaError(f"{path}.arguments", "application without arguments")
            return Application(head, arguments)
        case "ADT":
            return ADT(_terms(obj, "variants", path))
        case "Constructor":
            variant = _expect(_field(obj, "variant", path), int, f"{path}.variant", "integer")
            return Constructor(_str(obj, "reference", path), variant)
        case "Record":
            return Record(_terms(obj, "context", path), _terms(obj, "fields", path))
        case "Function":
            clauses = []
            for i, c in enumerate(_list(obj, "clauses", path)):
                cpath = f"{path}.clauses[{i}]"
                _expect(c, dict, cpath, "clause object")
                clauses.append(Clause(
                    _terms(c, "ctx", cpath),
                    _terms(c, "patterns", cpath),
                    decode_term(_field(c, "body", cpath), f"{cpath}.body"),
                ))
            return Function(tuple(clauses))
        case "Literal":
            return Literal(_opaque(obj, "literal", path))
        case "Sort":
            return Sort(_opaque(obj, "sort", path))
        case "Level":
            return Level(_opaque(obj, "level", path))
    raise SchemaError(f"{path}.tag", f"unknown term tag {tag!r}")


def _pterm(obj: Any, path: str) -> PTerm:
    _expect(obj, dict, path, "object")
    return PTerm(_str(obj, "pretty", path), decode_term(_field(obj, "term", path), f"{path}.term"))


def _termplus(obj: Any, path: str) -> TermPlus:
    _expect(obj, dict, path, "object")
    levels = {"original": _pterm(_field(obj, "original", path), f"{path}.original")}
    for level in REDUCTION_LEVELS[1:]:
        if obj.get(level) is not None:
            levels[level] = _pterm(obj[level], f"{path}.{level}")
    return TermPlus(**levels)


def _hole(obj: Any, path: str) -> RawHole:
    _expect(obj, dict, path, "hole object")
    context = []
    for i, c in enumerate(_list(obj, "context", path)):
        cpath = f"{path}.context[{i}]"
        _expect(c, dict, cpath, "context object")
        context.append(ContextItem(
            _str(c, "name", cpath),
            _str(c, "pretty", cpath),
            _termplus(_field(c, "type", cpath), f"{cpath}.type"),
        ))
    premises = _list(obj, "premises", path)
    for i, p in enumerate(premises):
        _expect(p, str, f"{path}.premises[{i}]", "string")
    return RawHole(
        tuple(context),
        _termplus(_field(obj, "goal", path), f"{path}.goal"),
        _termplus(_field(obj, "term", path), f"{path}.term"),
        tuple(premises),
    )


def _entry(obj: Any, path: str, allow_holes: bool) -> RawScopeEntry:
    _expect(obj, dict, path, "scope entry")
    holes = obj.get("holes") or []
    _expect(holes, list, f"{path}.holes", "array")
    if holes and not allow_holes:
        raise SchemaError(f"{path}.holes", "global scope entries cannot carry holes")
    return RawScopeEntry(
        _str(obj, "name", path),
        _termplus(_field(obj, "type", path), f"{path}.type"),
        _pterm(_field(obj, "definition", path), f"{path}.definition"),
        tuple(_hole(h, f"{path}.holes[{i}]") for i, h in enumerate(holes)),
    )


def decode_file(obj: Any, name: str | None = None) -> RawFile:
    """Decode an already-parsed JSON value into a :class:`RawFile`.

    The module name comes from an optional top-level ``"name"`` field, else
    from ``name`` (the file stem when loading from disk).
    """
    _expect(obj, dict, "$", "file object")
    sections = {}
    for key in ("scope-global", "scope-local", "scope-private"):
        sections[key] = tuple(
            _entry(e, f"$.{key}[{i}]", allow_holes=key != "scope-global")
            for i, e in enumerate(_list(obj, key, "$"))
        )
    if "name" in obj:
        name = _str(obj, "name", "$")
    file = RawFile(
        name or "<unnamed>",
        sections["scope-global"],
        sections["scope-local"],
        sections["scope-private"],
    )
    seen = set()
    for entry in file.entries():
        if entry.name in seen:
            raise DuplicateName(entry.name)
        seen.add(entry.name)
    return file


def parse_file(data: bytes | str, name: str | None = None) -> RawFile:
    """Parse one UTF-8 JSON document into a :class:`RawFile`.

    Raises ``json.JSONDecodeError`` (a ``ValueError``) on malformed JSON,
    :class:`SchemaError` when the document does not follow the term grammar
    and :class:`DuplicateName` when two scope entries share a name.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return decode_file(json.loads(data), name)


def load_file(path) -> RawFile:
    with open(path, "rb") as fh:
        return parse_file(fh.read(), Path(path).stem)


# ---------------------------------------------------------------------------
# encoding (inverse of decode_*)


def encode_term(term: RawTerm) -> dict:
    match term:
        case DeBruijn(index):
            return {"tag": "DeBruijn", "index": index}
        case ScopeReference(name):
            return {"tag": "ScopeReference", "name": name}
        case Pi(name, domain, codomain):
            return {"tag": "Pi", "name": name, "domain": encode_term(domain),
                    "codomain": encode_term(codomain)}
        case Lambda(abstraction, body):
            return {"tag": "Lambda", "abstraction": abstraction, "body": encode_term(body)}
        case Application(head, arguments):
            return {"tag": "Application", "head": encode_term(head),
                    "arguments": [encode_term(a) for a in arguments]}
        case ADT(variants):
            return {"tag": "ADT", "variants": [encode_term(v) for v in variants]}
        case Constructor(reference, variant):
            return {"tag": "Constructor", "reference": reference, "variant": variant}
        case Record(context, fields):
            return {"tag": "Record", "context": [encode_term(c) for c in context],
                    "fields": [encode_term(f) for f in fields]}
        case Function(clauses):
            return {"tag": "Function", "clauses": [
                {"ctx": [encode_term(t) for t in c.ctx],
                 "patterns": [encode_term(t) for t in c.patterns],
                 "body": encode_term(c.body)} for c in clauses]}
        case Literal(value) | Sort(value) | Level(value):
            tag = type(term).__name__
            out = {"tag": tag}
            if value is not None:
                out[tag.lower()] = value
            return out
    raise TypeError(f"not a term: {term!r}")


def _encode_pterm(p: PTerm) -> dict:
    return {"pretty": p.pretty, "term": encode_term(p.term)}


def _encode_termplus(tp: TermPlus) -> dict:
    out = {}
    for level in REDUCTION_LEVELS:
        value = getattr(tp, level)
        if value is not None:
            out[level] = _encode_pterm(value)
    return out


def _encode_entry(e: RawScopeEntry, with_holes: bool) -> dict:
    out = {"name": e.name, "type": _encode_termplus(e.type),
           "definition": _encode_pterm(e.definition)}
    if with_holes:
        out["holes"] = [
            {"context": [{"name": c.name, "pretty": c.pretty, "type": _encode_termplus(c.type)}
                         for c in h.context],
             "goal": _encode_termplus(h.goal),
             "term": _encode_termplus(h.term),
             "premises": list(h.premises)}
            for h in e.holes
        ]
    return out


def encode_file(file: RawFile) -> dict:
    return {
        "name": file.name,
        "scope-global": [_encode_entry(e, False) for e in file.scope_global],
        "scope-local": [_encode_entry(e, True) for e in file.scope_local],
        "scope-private": [_encode_entry(e, True) for e in file.scope_private],
    }


def dump_file(file: RawFile) -> str:
    return json.dumps(encode_file(file), ensure_ascii=False, indent=1)


# ---------------------------------------------------------------------------
# scope helpers


def select_reduction(tp: TermPlus, preference: Sequence[str] = ("original",)) -> RawTerm:
    """Return the term at the first populated reduction level in ``preference``.

    ``original`` is always populated, so it is the fallback when no preferred
    level is present.
    """
    for level in preference:
        if level not in REDUCTION_LEVELS:
            raise ValueError(f"unknown reduction level {level!r}")
        value = getattr(tp, level)
        if value is not None:
            return value.term
    return tp.original.term


@dataclass(frozen=True)
class ScopeItem:
    name: str
    type: TermPlus
    section: str
    holes: tuple[RawHole, ...] = field(default=())


def collect_scope(file: RawFile) -> list[ScopeItem]:
    """Flatten the three scope sections in global, local, private order."""
    items = []
    seen = set()
    for section, entries in (("global", file.scope_global), ("local", file.scope_local),
                             ("private", file.scope_private)):
        for e in entries:
            if e.name in seen:
                raise DuplicateName(e.name)
            seen.add(e.name)
            items.append(ScopeItem(e.name, e.type, section, e.holes))
    return items


def premise_violations(file: RawFile) -> list[str]:
    """Premises naming something absent from the file's scope, as diagnostics."""
    names = {e.name for e in file.entries()}
    problems = []
    for e in file.entries():
        for i, hole in enumerate(e.holes):
            for p in hole.premises:
                if p not in names:
                    problems.append(f"{e.name} hole {i}: premise {p!r} not in scope")
    return problems
