"""Binarized, reference-resolved token trees and per-file dependency graphs.

A type term becomes a binary tree stored in depth-first pre-order. Node 0 is
the ``[sos]`` root carrying the whole type as its left child. Tree positions
are heap indices: the root is 1 and the children of ``i`` are ``2i`` and
``2i + 1``.

De Bruijn indices are resolved into pointers to the binder node; scope names
are resolved into scope ordinals. Nothing downstream ever sees a name.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import (
    ADT, Application, Constructor, ContextItem, DeBruijn, Function, Lambda, Level,
    Literal, Pi, RawFile, RawTerm, Record, ScopeReference, Sort, collect_scope,
    select_reduction,
)

__all__ = [
    "NodeKind",
    "STATIC_KINDS",
    "TokenTree",
    "GraphEntry",
    "FileGraph",
    "TokenizeError",
    "UnsupportedConstruct",
    "DanglingIndex",
    "CyclicDependency",
    "Reject",
    "Verdict",
    "MAX_TOKENS",
    "fold_context",
    "binarize",
    "resolve_references",
    "tokenize_type",
    "build_file_graph",
    "filter_file",
    "tokenize_file",
    "write_cache",
    "read_cache",
    "CACHE_FORMAT",
    "CACHE_VERSION",
]

MAX_TOKENS = 2 ** 14


class NodeKind(enum.IntEnum):
    PI = 0
    ARROW = 1
    LAMBDA = 2
    APP = 3
    SORT = 4
    LEVEL = 5
    LIT = 6
    SOS = 7
    OOS = 8
    VAR = 9
    REF = 10
    # only present between binarize() and resolve_references()
    UNRESOLVED_VAR = 11
    UNRESOLVED_REF = 12


# kinds that index the static embedding table directly
STATIC_KINDS = tuple(NodeKind(i) for i in range(9))


class TokenizeError(Exception):
    pass


class UnsupportedConstruct(TokenizeError):
    pass


class DanglingIndex(TokenizeError):
    pass


class CyclicDependency(TokenizeError):
    def __init__(self, names: Sequence[str]):
        shown = ", ".join(sorted(names)[:5])
        super().__init__(f"cyclic references among {len(names)} entries: {shown}")
        self.names = tuple(names)


@dataclass(frozen=True, eq=False)
class TokenTree:
    """Pre-order node arrays of a binarized type.

    ``ref`` holds the binder node index for ``VAR`` nodes and the scope
    ordinal for ``REF`` nodes, -1 elsewhere. ``payload`` keeps the raw de
    Bruijn index or scope name of unresolved nodes and is empty afterwards.
    """

    kind: np.ndarray
    left: np.ndarray
    right: np.ndarray
    ref: np.ndarray
    position: tuple[int, ...]
    payload: tuple = ()

    def __len__(self) -> int:
        return len(self.kind)

    @property
    def parent(self) -> np.ndarray:
        parent = np.full(len(self), -1, dtype=np.int64)
        for child in (self.left, self.right):
            has = child >= 0
            parent[child[has]] = np.nonzero(has)[0]
        return parent

    @property
    def depth(self) -> np.ndarray:
        return np.array([p.bit_length() - 1 for p in self.position], dtype=np.int64)

    def same_as(self, other: TokenTree) -> bool:
        return (
            len(self) == len(other)
            and self.position == other.position
            and all(np.array_equal(a, b) for a, b in (
                (self.kind, other.kind), (self.left, other.left),
                (self.right, other.right), (self.ref, other.ref)))
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "ref": self.ref.tolist(),
            "pos": list(self.position),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TokenTree:
        return cls(
            np.asarray(d["kind"], dtype=np.int64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["ref"], dtype=np.int64),
            tuple(int(p) for p in d["pos"]),
        )


# ---------------------------------------------------------------------------
# term level transformations


def fold_context(context: Sequence[ContextItem | tuple[str, RawTerm]], goal: RawTerm,
                 preference: Sequence[str] = ("original",)) -> RawTerm:
    """Fold a hole's typed context into nested Pi binders around the goal.

    The first context entry becomes the outermost binder. Indices are left
    alone: they already count binders in telescope order.
    """
    folded = goal
    for item in reversed(context):
        if isinstance(item, ContextItem):
            name, ty = item.name, select_reduction(item.type, preference)
        else:
            name, ty = item
        folded = Pi(name, ty, folded)
    return folded


def _uses_index(term: RawTerm, target: int) -> bool:
    """Whether de Bruijn ``target`` (relative to ``term``'s root) occurs free."""
    stack = [(term, target)]
    while stack:
        t, k = stack.pop()
        match t:
            case DeBruijn(index):
                if index == k:
                    return True
            case Pi(_, domain, codomain):
                stack.append((domain, k))
                stack.append((codomain, k + 1))
            case Lambda(_, body):
                stack.append((body, k + 1))
            case Application(head, arguments):
                stack.append((head, k))
                stack.extend((a, k) for a in arguments)
    return False


def binarize(term: RawTerm) -> TokenTree:
    """Binarize a type-level term below an ``[sos]`` root.

    Pi becomes ``PI`` (or ``ARROW`` when the codomain never mentions the bound
    variable) with domain left and codomain right; an application with ``k``
    arguments becomes a left-nested spine of ``k`` ``APP`` nodes with the head
    deepest-left; a lambda keeps its body as the left child.
    """
    kind: list[int] = [NodeKind.SOS]
    left: list[int] = [-1]
    right: list[int] = [-1]
    position: list[int] = [1]
    payload: list = [None]

    # (term, parent node, is_right_child)
    stack: list[tuple[RawTerm, int, bool]] = [(term, 0, False)]
    while stack:
        t, parent, is_right = stack.pop()
        idx = len(kind)
        pos = 2 * position[parent] + int(is_right)
        if is_right:
            right[parent] = idx
        else:
            left[parent] = idx
        position.append(pos)
        left.append(-1)
        right.append(-1)
        payload.append(None)
        match t:
            case Pi(_, domain, codomain):
                kind.append(NodeKind.PI if _uses_index(codomain, 0) else NodeKind.ARROW)
                stack.append((codomain, idx, True))
                stack.append((domain, idx, False))
            case Lambda(_, body):
                kind.append(NodeKind.LAMBDA)
                stack.append((body, idx, False))
            case Application(head, arguments):
                # the outermost APP takes the last argument on its right
                kind.append(NodeKind.APP)
                if len(arguments) == 1:
                    stack.append((arguments[0], idx, True))
                    stack.append((head, idx, False))
                else:
                    stack.append((arguments[-1], idx, True))
                    stack.append((Application(head, arguments[:-1]), idx, False))
            case DeBruijn(index):
                kind.append(NodeKind.UNRESOLVED_VAR)
                payload[idx] = index
            case ScopeReference(name):
                kind.append(NodeKind.UNRESOLVED_REF)
                payload[idx] = name
            case Sort():
                kind.append(NodeKind.SORT)
            case Level():
                kind.append(NodeKind.LEVEL)
            case Literal():
                kind.append(NodeKind.LIT)
            case ADT() | Constructor() | Record() | Function():
                raise UnsupportedConstruct(f"{type(t).__name__} inside a type")
            case _:
                raise TypeError(f"not a term: {t!r}")
    n = len(kind)
    return TokenTree(
        np.asarray(kind, dtype=np.int64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.full(n, -1, dtype=np.int64),
        tuple(position),
        tuple(payload),
    )


def resolve_references(tree: TokenTree, scope: Mapping[str, int],
                       cutoff: int | None = None) -> TokenTree:
    """Replace de Bruijn indices by binder pointers and names by ordinals.

    Names outside ``scope`` (or with an ordinal ``>= cutoff``) become
    ``[oos]``. An index pointing past the outermost binder raises
    :class:`DanglingIndex`.
    """
    if not tree.payload:
        return tree
    kind = tree.kind.copy()
    ref = tree.ref.copy()
    parent = tree.parent
    for i, k in enumerate(tree.kind):
        if k == NodeKind.UNRESOLVED_VAR:
            remaining = tree.payload[i]
            child, node = i, parent[i]
            while node >= 0:
                binds = (
                    (kind[node] in (NodeKind.PI, NodeKind.ARROW) and tree.right[node] == child)
                    or (kind[node] == NodeKind.LAMBDA and tree.left[node] == child)
                )
                if binds:
                    if remaining == 0:
                        break
                    remaining -= 1
                child, node = node, parent[node]
            if node < 0:
                raise DanglingIndex(
                    f"de Bruijn index {tree.payload[i]} at node {i} exceeds its binders")
            kind[i] = NodeKind.VAR
            ref[i] = node
        elif k == NodeKind.UNRESOLVED_REF:
            ordinal = scope.get(tree.payload[i])
            if ordinal is None or (cutoff is not None and ordinal >= cutoff):
                kind[i] = NodeKind.OOS
            else:
                kind[i] = NodeKind.REF
                ref[i] = ordinal
    return TokenTree(kind, tree.left.copy(), tree.right.copy(), ref, tree.position)


def tokenize_type(term: RawTerm, scope: Mapping[str, int] | None = None,
                  cutoff: int | None = None) -> TokenTree:
    return resolve_references(binarize(term), scope or {}, cutoff)


# ---------------------------------------------------------------------------
# file graphs


@dataclass(frozen=True, eq=False)
class GraphEntry:
    """A scope entry or a hole inside a :class:`FileGraph`.

    ``ordinal`` is the scope position (of the owning entry, for holes).
    ``cutoff`` bounds the legal candidates: a hole may be paired with any scope
    ordinal ``< cutoff``. For lemmas ``cutoff == ordinal``.
    """

    name: str
    tree: TokenTree
    is_hole: bool
    ordinal: int
    cutoff: int
    level: int
    positives: frozenset[int] = frozenset()
    premises: tuple[str, ...] = ()

    @property
    def references(self) -> frozenset[int]:
        return frozenset(int(r) for r in self.tree.ref[self.tree.kind == NodeKind.REF])


@dataclass(frozen=True, eq=False)
class FileGraph:
    """Entries of one file: lemmas first (index == ordinal), then holes."""

    name: str
    entries: tuple[GraphEntry, ...]
    levels: tuple[tuple[int, ...], ...]
    num_lemmas: int

    @property
    def lemmas(self) -> tuple[GraphEntry, ...]:
        return self.entries[: self.num_lemmas]

    @property
    def hole_indices(self) -> tuple[int, ...]:
        return tuple(range(self.num_lemmas, len(self.entries)))

    @property
    def num_holes(self) -> int:
        return len(self.entries) - self.num_lemmas

    @property
    def total_tokens(self) -> int:
        return sum(len(e.tree) for e in self.entries)

    def hole_labels(self) -> dict[int, frozenset[int]]:
        return {i: self.entries[i].positives for i in self.hole_indices}

    def candidates(self, index: int) -> range:
        return range(self.entries[index].cutoff)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_lemmas": self.num_lemmas,
            "levels": [list(level) for level in self.levels],
            "entries": [
                {"name": e.name, "hole": e.is_hole, "ordinal": e.ordinal,
                 "cutoff": e.cutoff, "level": e.level,
                 "positives": sorted(e.positives), "premises": list(e.premises),
                 "tree": e.tree.to_dict()}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FileGraph:
        entries = tuple(
            GraphEntry(e["name"], TokenTree.from_dict(e["tree"]), bool(e["hole"]),
                       int(e["ordinal"]), int(e["cutoff"]), int(e["level"]),
                       frozenset(e["positives"]), tuple(e["premises"]))
            for e in d["entries"]
        )
        return cls(d["name"], entries, tuple(tuple(lv) for lv in d["levels"]),
                   int(d["num_lemmas"]))


def _peel_levels(refs: Sequence[frozenset[int]], names: Sequence[str]) -> list[int]:
    level = [-1] * len(refs)
    pending = set(range(len(refs)))
    current = 0
    while pending:
        ready = [i for i in sorted(pending) if all(0 <= level[r] < current for r in refs[i])]
        if not ready:
            raise CyclicDependency([names[i] for i in pending])
        for i in ready:
            level[i] = current
        pending.difference_update(ready)
        current += 1
    return level


def build_file_graph(file: RawFile, preference: Sequence[str] = ("original",)) -> FileGraph:
    """Tokenize every scope entry and hole of ``file`` and stratify them.

    Lemma types resolve every in-file name. A hole owned by the entry with
    ordinal ``s`` may only see ordinals ``<= s`` (the owner stays visible for
    recursive calls); later names become ``[oos]`` and later premises are
    dropped from its positives.
    """
    items = collect_scope(file)
    scope = {item.name: i for i, item in enumerate(items)}
    names = [item.name for item in items]

    lemma_trees = [
        tokenize_type(select_reduction(item.type, preference), scope) for item in items
    ]
    lemma_refs = [
        frozenset(int(r) for r in t.ref[t.kind == NodeKind.REF]) for t in lemma_trees
    ]
    levels = _peel_levels(lemma_refs, names)

    entries = [
        GraphEntry(item.name, tree, False, i, i, levels[i])
        for i, (item, tree) in enumerate(zip(items, lemma_trees))
    ]
    for s, item in enumerate(items):
        for h, hole in enumerate(item.holes):
            folded = fold_context(hole.context, select_reduction(hole.goal, preference),
                                  preference)
            tree = tokenize_type(folded, scope, cutoff=s + 1)
            refs = tree.ref[tree.kind == NodeKind.REF]
            level = 1 + max((levels[r] for r in refs), default=-1)
            positives = frozenset(
                scope[p] for p in hole.premises if p in scope and scope[p] <= s)
            entries.append(GraphEntry(f"{item.name}#{h}", tree, True, s, s + 1, level,
                                      positives, tuple(hole.premises)))

    depth = 1 + max((e.level for e in entries), default=-1)
    partition = tuple(
        tuple(i for i, e in enumerate(entries) if e.level == k) for k in range(depth))
    return FileGraph(file.name, tuple(entries), partition, len(items))


# ---------------------------------------------------------------------------
# filtering


class Reject(str, enum.Enum):
    NO_HOLES = "no holes"
    TOO_LARGE = "too large"
    CYCLIC = "mutual induction"
    UNSUPPORTED = "unsupported construct"
    DANGLING = "dangling index"
    SCHEMA = "schema error"


@dataclass(frozen=True)
class Verdict:
    reason: Reject | None = None
    detail: str = ""

    @property
    def accepted(self) -> bool:
        return self.reason is None

    def __str__(self) -> str:
        return "accept" if self.accepted else f"reject ({self.reason.value})"


def filter_file(graph: FileGraph, max_tokens: int = MAX_TOKENS) -> Verdict:
    if graph.num_holes == 0:
        return Verdict(Reject.NO_HOLES)
    total = graph.total_tokens
    if total > max_tokens:
        return Verdict(Reject.TOO_LARGE, f"{total} tokens")
    return Verdict()


def tokenize_file(file: RawFile, max_tokens: int = MAX_TOKENS,
                  preference: Sequence[str] = ("original",)) -> tuple[FileGraph | None, Verdict]:
    """Build and filter in one go; tokenization failures become rejections."""
    try:
        graph = build_file_graph(file, preference)
    except CyclicDependency as e:
        return None, Verdict(Reject.CYCLIC, str(e))
    except UnsupportedConstruct as e:
        return None, Verdict(Reject.UNSUPPORTED, str(e))
    except DanglingIndex as e:
        return None, Verdict(Reject.DANGLING, str(e))
    return graph, filter_file(graph, max_tokens)


# ---------------------------------------------------------------------------
# corpus cache

CACHE_FORMAT = "premsel-corpus"
CACHE_VERSION = 1


def write_cache(path, graphs: Iterable[tuple[FileGraph, Verdict]], max_tokens: int) -> None:
    """Write graphs as newline-delimited JSON behind a one-line header.

    Only graphs that were accepted or rejected as too large are kept; the
    latter are flagged ``oversized`` so that splitting can route them.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {"format": CACHE_FORMAT, "version": CACHE_VERSION, "max_tokens": max_tokens}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for graph, verdict in graphs:
            record = graph.to_dict()
            record["oversized"] = verdict.reason is Reject.TOO_LARGE
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def read_cache(path) -> tuple[dict, list[tuple[FileGraph, bool]]]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CACHE_FORMAT:
            raise ValueError(f"{path}: not a corpus cache")
        if header.get("version") != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {header.get('version')}")
        records = []
        for line in fh:
            if line.strip():
                d = json.loads(line)
                records.append((FileGraph.from_dict(d), bool(d["oversized"])))
    return header, records
