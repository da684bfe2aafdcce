"""Seeded generator of small, well-formed corpus files with planted premises.

Every file imports a few base types, relations and functions, defines some
local functions, and then states rule lemmas in small families whose members
differ only in how variables are arranged; some rules are stated twice under
different names. Theorems at the end of the file carry holes: each hole
restates one rule (hypotheses moved into the context, sometimes with
distractor hypotheses and an instantiated variable) and its premises are all
copies of that rule. Optionally the local definitions the hole mentions are
premises too.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import (
    ADT, Application, Clause, ContextItem, DeBruijn, Function, Lambda, Literal, PTerm, Pi,
    RawFile, RawHole, RawScopeEntry, RawTerm, Record, ScopeReference, Sort, TermPlus, dump_file,
)

__all__ = ["SyntheticSpec", "synthetic_file", "synthetic_corpus", "write_corpus", "rename_file"]


@dataclass(frozen=True)
class SyntheticSpec:
    base_types: int = 3
    relations: int = 3
    functions: int = 2
    definitions: int = 3
    families: int = 7
    family_size: int = 3
    theorems: int = 4
    holes: int = 10
    max_vars: int = 3
    distractor_rate: float = 0.3
    instantiate_rate: float = 0.3
    duplicate_rate: float = 0.25
    definition_premises: bool = False


def _ref(name: str) -> ScopeReference:
    return ScopeReference(name)


def _tp(term: RawTerm, pretty: str = "_") -> TermPlus:
    return TermPlus(PTerm(pretty, term))


_PROOF = PTerm("_", Literal("proof"))
_SET = Sort("Set")


# Argument expressions: ("var", i) or ("app", function name, ("var", i)).
def _arg(expr, depth: int) -> RawTerm:
    if expr[0] == "var":
        return DeBruijn(depth - 1 - expr[1])
    return Application(_ref(expr[1]), (_arg(expr[2], depth),))


def _atom(atom, depth: int) -> RawTerm:
    rel, args = atom
    return Application(_ref(rel), tuple(_arg(a, depth) for a in args))


def _arrows(atoms, depth: int) -> RawTerm:
    """``H1 -> H2 -> ... -> C`` where arrows bind anonymous, unused names."""
    *hyps, concl = atoms
    body = _atom(concl, depth + len(hyps))
    for k in range(len(hyps) - 1, -1, -1):
        body = Pi("_", _atom(hyps[k], depth + k), body)
    return body


def _forall(var_types, body: RawTerm, names) -> RawTerm:
    for i in range(len(var_types) - 1, -1, -1):
        body = Pi(names[i], _ref(var_types[i]), body)
    return body


def _subst(expr, var: int, fn: str):
    if expr[0] == "var":
        return ("app", fn, expr) if expr[1] == var else expr
    return ("app", expr[1], _subst(expr[2], var, fn))


def _functions_in(expr, out: set) -> None:
    if expr[0] == "app":
        out.add(expr[1])
        _functions_in(expr[2], out)


class _Names:
    def __init__(self, rng: np.random.Generator, prefix: str):
        self.rng = rng
        self.prefix = prefix
        self.used: set[str] = set()

    def fresh(self, stem: str) -> str:
        while True:
            name = f"{stem}-{self.prefix}{int(self.rng.integers(10_000))}"
            if name not in self.used:
                self.used.add(name)
                return name


def synthetic_file(seed: int, spec: SyntheticSpec = SyntheticSpec(), name: str | None = None) -> RawFile:
    rng = np.random.default_rng(seed)
    names = _Names(rng, "")
    var_names = ["x", "y", "z", "w", "u", "v"]

    # Names are invisible to the encoder, so imports must differ structurally:
    # base type k is indexed by k copies of the first one, and relation and
    # function signatures are pairwise distinct.
    types = [f"T{i}" for i in range(spec.base_types)]
    glob = []
    for k, t in enumerate(types):
        ty: RawTerm = _SET
        for _ in range(k):
            ty = Pi("_", _ref(types[0]), ty)
        glob.append(RawScopeEntry(t, _tp(ty), _PROOF))
    rel_sigs = [(a,) for a in range(len(types))] + [(a, b) for a in range(len(types))
                                                    for b in range(len(types))]
    picks = rng.choice(len(rel_sigs), size=spec.relations, replace=False)
    relations = [(f"R{i}", len(rel_sigs[j])) for i, j in enumerate(picks)]
    for (r, _), j in zip(relations, picks):
        ty = _SET
        for a in reversed(rel_sigs[j]):
            ty = Pi("_", _ref(types[a]), ty)
        glob.append(RawScopeEntry(r, _tp(ty), _PROOF))
    functions = [f"F{i}" for i in range(spec.functions)]
    # Imported functions are binary and local definitions unary, so the two
    # kinds never share a signature; within a kind signatures are distinct.
    n = len(types)
    binary = [(a, b, c) for a in range(n) for b in range(n) for c in range(n)]
    unary = [(a, b) for a in range(n) for b in range(n)]
    for f, j in zip(functions, rng.choice(len(binary), size=spec.functions, replace=False)):
        a, b, c = binary[j]
        glob.append(RawScopeEntry(
            f, _tp(Pi("_", _ref(types[a]), Pi("_", _ref(types[b]), _ref(types[c])))), _PROOF))

    local: list[RawScopeEntry] = []
    defs = [names.fresh("def") for _ in range(spec.definitions)]
    for d, j in zip(defs, rng.choice(len(unary), size=spec.definitions, replace=False)):
        a, b = unary[j]
        local.append(RawScopeEntry(d, _tp(Pi("_", _ref(types[a]), _ref(types[b]))),
                                   PTerm("_", Lambda("a", DeBruijn(0)))))

    def random_arg(k: int):
        v = ("var", int(rng.integers(k)))
        if rng.random() < 0.3:
            pool = functions + defs
            return ("app", pool[int(rng.integers(len(pool)))], v)
        return v

    rules = []   # (name, var_types, atoms)
    for _ in range(spec.families):
        k = int(rng.integers(2, spec.max_vars + 1))
        var_types = [types[int(rng.integers(len(types)))] for _ in range(k)]
        n_atoms = int(rng.integers(1, 4))
        template = []
        for _ in range(n_atoms):
            rel, arity = relations[int(rng.integers(len(relations)))]
            template.append((rel, [random_arg(k) for _ in range(arity)]))
        seen = set()
        for _ in range(spec.family_size * 4):
            if len(seen) == spec.family_size:
                break
            perm = rng.permutation(k)
            # family members share shape and symbols, only variable slots move
            atoms = tuple((rel, tuple(_permute(a, perm) for a in args)) for rel, args in template)
            if atoms in seen:
                continue
            seen.add(atoms)
            rules.append((names.fresh("rule"), var_types, atoms))
            if rng.random() < spec.duplicate_rate:
                rules.append((names.fresh("rule"), var_types, atoms))
    order = rng.permutation(len(rules))
    rules = [rules[i] for i in order]
    for rname, var_types, atoms in rules:
        term = _forall(var_types, _arrows(atoms, len(var_types)), var_names)
        local.append(RawScopeEntry(rname, _tp(term), _PROOF))

    theorem_names = [names.fresh("thm") for _ in range(spec.theorems)]
    hole_lists: list[list[RawHole]] = [[] for _ in theorem_names]
    for h in range(spec.holes):
        rname, var_types, atoms = rules[int(rng.integers(len(rules)))]
        # restatements of the same rule under another name prove the hole equally well
        copies = sorted(n for n, vt, at in rules if vt == var_types and at == atoms)
        k = len(var_types)
        if rng.random() < spec.instantiate_rate:
            var, fn = int(rng.integers(k)), functions[int(rng.integers(len(functions)))]
            atoms = tuple((rel, tuple(_subst(a, var, fn) for a in args)) for rel, args in atoms)
        used: set[str] = set()
        for _, args in atoms:
            for a in args:
                _functions_in(a, used)
        *hyps, concl = atoms
        hyps = list(hyps)
        while rng.random() < spec.distractor_rate:
            rel, arity = relations[int(rng.integers(len(relations)))]
            hyps.insert(int(rng.integers(len(hyps) + 1)),
                        (rel, tuple(random_arg(k) for _ in range(arity))))
        context = [ContextItem(var_names[i], var_names[i], _tp(_ref(var_types[i])))
                   for i in range(k)]
        for j, hyp in enumerate(hyps):
            context.append(ContextItem(f"h{j}", f"h{j}", _tp(_atom(hyp, k + j))))
        goal = _atom(concl, k + len(hyps))
        premises = tuple(copies)
        if spec.definition_premises:
            premises += tuple(sorted(d for d in defs if d in used))
        hole_lists[h % len(theorem_names)].append(
            RawHole(tuple(context), _tp(goal), TermPlus(_PROOF), premises))

    for tname, holes in zip(theorem_names, hole_lists):
        k = int(rng.integers(1, spec.max_vars + 1))
        rel, arity = relations[int(rng.integers(len(relations)))]
        stmt = _forall([types[0]] * k, _atom((rel, [random_arg(k) for _ in range(arity)]), k),
                       var_names)
        local.append(RawScopeEntry(tname, _tp(stmt), _PROOF, tuple(holes)))

    private_split = len(local) - 1
    return RawFile(name or f"Synthetic.File{seed}", tuple(glob), tuple(local[:private_split]),
                   tuple(local[private_split:]))


def _permute(expr, perm):
    if expr[0] == "var":
        return ("var", int(perm[expr[1]]))
    return ("app", expr[1], _permute(expr[2], perm))


def synthetic_corpus(n: int, seed: int = 0, spec: SyntheticSpec = SyntheticSpec()) -> list[RawFile]:
    seeds = np.random.default_rng(seed).integers(0, 2 ** 31, size=n)
    return [synthetic_file(int(s), spec, name=f"Synthetic.File{seed}x{i}") for i, s in enumerate(seeds)]


def write_corpus(directory, n: int, seed: int = 0, spec: SyntheticSpec = SyntheticSpec()) -> list[Path]:
    """Write ``n`` synthetic files as JSON documents into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in synthetic_corpus(n, seed, spec):
        path = out / f"{f.name}.json"
        path.write_text(dump_file(f), encoding="utf-8")
        paths.append(path)
    return paths


def rename_file(file: RawFile, mapping=None, binder_suffix: str = "'") -> RawFile:
    """Consistently rename every scope entry, premise and binder of ``file``.

    ``mapping`` defaults to appending ``"'"`` to each entry name. The result
    is alpha-equivalent to the input.
    """
    if mapping is None:
        mapping = {e.name: e.name + "'" for e in file.entries()}

    def term(t):
        match t:
            case ScopeReference(n):
                return ScopeReference(mapping.get(n, n))
            case Pi(n, d, c):
                return Pi(n + binder_suffix, term(d), term(c))
            case Lambda(n, b):
                return Lambda(n + binder_suffix, term(b))
            case Application(h, args):
                return Application(term(h), tuple(term(a) for a in args))
            case ADT(vs):
                return ADT(tuple(term(v) for v in vs))
            case Record(ctx, fs):
                return Record(tuple(term(c) for c in ctx), tuple(term(f) for f in fs))
            case Function(cls):
                return Function(tuple(Clause(tuple(term(c) for c in cl.ctx),
                                             tuple(term(p) for p in cl.patterns), term(cl.body))
                                      for cl in cls))
        return t

    def pterm(p):
        return None if p is None else PTerm(p.pretty, term(p.term))

    def tplus(tp):
        return TermPlus(pterm(tp.original), pterm(tp.simplified), pterm(tp.reduced), pterm(tp.normalised))

    def hole(h):
        return RawHole(tuple(ContextItem(c.name + binder_suffix, c.pretty, tplus(c.type))
                             for c in h.context),
                       tplus(h.goal), tplus(h.term), tuple(mapping.get(p, p) for p in h.premises))

    def entry(e):
        return RawScopeEntry(mapping.get(e.name, e.name), tplus(e.type), pterm(e.definition),
                             tuple(hole(h) for h in e.holes))

    return RawFile(file.name, tuple(entry(e) for e in file.scope_global),
                   tuple(entry(e) for e in file.scope_local),
                   tuple(entry(e) for e in file.scope_private))
