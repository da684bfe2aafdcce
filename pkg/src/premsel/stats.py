"""Corpus statistics: sizes, AST lengths and lemma occurrence counts."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .ingest import (
    Application, Clause, Function, Lambda, Pi, RawFile, RawTerm, ScopeReference,
    ADT, Record, select_reduction,
)
from .tokenizer import TokenizeError, binarize

__all__ = ["FileCounts", "StatsReport", "dataset_stats", "log_histogram", "scope_references"]


def scope_references(term: RawTerm) -> set[str]:
    """Names referenced anywhere inside ``term`` (each counted once)."""
    found: set[str] = set()
    stack = [term]
    while stack:
        t = stack.pop()
        match t:
            case ScopeReference(name):
                found.add(name)
            case Pi(_, domain, codomain):
                stack += [domain, codomain]
            case Lambda(_, body):
                stack.append(body)
            case Application(head, args):
                stack.append(head)
                stack.extend(args)
            case ADT(variants):
                stack.extend(variants)
            case Record(context, fields):
                stack.extend(context)
                stack.extend(fields)
            case Function(clauses):
                for c in clauses:
                    stack.extend(c.ctx)
                    stack.extend(c.patterns)
                    if c.body is not None:
                        stack.append(c.body)
    return found


def log_histogram(values: Iterable[float], bins: int = 20) -> list[tuple[float, int]]:
    """Histogram of ``log(1 + x)`` as (bin left edge, count) pairs."""
    values = np.log1p(np.asarray(list(values), dtype=np.float64))
    if values.size == 0:
        return []
    counts, edges = np.histogram(values, bins=bins)
    return [(float(e), int(c)) for e, c in zip(edges[:-1], counts)]


@dataclass(frozen=True)
class FileCounts:
    name: str
    imports: int
    definitions: int
    holes: int

    @property
    def entries(self) -> int:
        return self.imports + self.definitions


@dataclass
class StatsReport:
    files: list[FileCounts]
    ast_lengths: list[int]
    import_counts: Counter = field(default_factory=Counter)
    premise_counts: Counter = field(default_factory=Counter)
    skipped_terms: int = 0

    def histograms(self, bins: int = 20) -> dict[str, list[tuple[float, int]]]:
        return {
            "file_entries": log_histogram((f.entries for f in self.files), bins),
            "file_holes": log_histogram((f.holes for f in self.files), bins),
            "ast_length": log_histogram(self.ast_lengths, bins),
            "import_count": log_histogram(self.import_counts.values(), bins),
            "premise_count": log_histogram(self.premise_counts.values(), bins),
        }

    def to_records(self, bins: int = 20) -> list[dict]:
        """Flat records suitable for newline-delimited JSON."""
        out = [{"kind": "file", "name": f.name, "imports": f.imports,
                "definitions": f.definitions, "holes": f.holes} for f in self.files]
        for name, hist in self.histograms(bins).items():
            out.extend({"kind": "histogram", "name": name, "bin": b, "count": c} for b, c in hist)
        lemmas = sorted(set(self.import_counts) | set(self.premise_counts))
        out.extend({"kind": "lemma", "name": n, "imports": self.import_counts.get(n, 0),
                    "premise_uses": self.premise_counts.get(n, 0)} for n in lemmas)
        return out


def dataset_stats(files: Sequence[RawFile], preference: Sequence[str] = ("original",)) -> StatsReport:
    """Count entries and holes per file and how often each lemma is used.

    A lemma counts as imported once per file that lists it in its global
    scope, and as a premise at most once per hole, however often that hole's
    term mentions it. Premise uses are read from each hole's premise list.
    """
    report = StatsReport([], [])
    for f in files:
        n_holes = sum(len(e.holes) for e in f.entries())
        report.files.append(FileCounts(f.name, len(f.scope_global),
                                       len(f.scope_local) + len(f.scope_private), n_holes))
        for e in f.scope_global:
            report.import_counts[e.name] += 1
        for e in f.entries():
            try:
                report.ast_lengths.append(len(binarize(select_reduction(e.type, preference))))
            except TokenizeError:
                report.skipped_terms += 1
            for hole in e.holes:
                for p in set(hole.premises):
                    report.premise_counts[p] += 1
    return report
