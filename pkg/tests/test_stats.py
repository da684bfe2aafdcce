import numpy as np
import pytest

from premsel.ingest import Pi, Sort
from premsel.stats import dataset_stats, log_histogram, scope_references

from conftest import app, ref


def test_scope_references():
    t = Pi("x", ref("A"), app(ref("f"), ref("A"), ref("g")))
    assert scope_references(t) == {"A", "f", "g"}
    assert scope_references(Sort()) == set()


def test_log_histogram():
    assert log_histogram([]) == []
    hist = log_histogram([0, 1, 10, 100, 1000], bins=4)
    assert sum(c for _, c in hist) == 5
    assert hist[0][0] == 0.0 and hist[-1][0] < np.log1p(1000)


def test_nat_comm_counts(nat_comm):
    rep = dataset_stats([nat_comm])
    [f] = rep.files
    assert (f.imports, f.definitions, f.holes, f.entries) == (4, 6, 6, 10)
    assert rep.import_counts["Agda.Builtin.Equality._≡_<12>"] == 1
    # one count per hole that lists the premise, never more
    assert rep.premise_counts["ℕ.suc<6>"] == 4
    assert rep.premise_counts["+-suc<38>"] == 2
    assert len(rep.ast_lengths) == 10 and rep.skipped_terms == 0


def test_imports_counted_per_file(nat_comm):
    rep = dataset_stats([nat_comm, nat_comm])
    assert rep.import_counts["Agda.Builtin.Equality._≡_<12>"] == 2
    recs = rep.to_records()
    lemma = next(r for r in recs if r["kind"] == "lemma" and r["name"] == "ℕ.suc<6>")
    assert lemma == {"kind": "lemma", "name": "ℕ.suc<6>", "imports": 0, "premise_uses": 8}
