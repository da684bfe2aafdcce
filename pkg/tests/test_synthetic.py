import dataclasses

import numpy as np

from premsel.ingest import dump_file, load_file, premise_violations
from premsel.synthetic import SyntheticSpec, rename_file, synthetic_corpus, synthetic_file, write_corpus
from premsel.tokenizer import build_file_graph, tokenize_file


def test_reproducible():
    assert dump_file(synthetic_file(4)) == dump_file(synthetic_file(4))
    assert dump_file(synthetic_file(4)) != dump_file(synthetic_file(5))


def test_files_are_accepted_with_labels():
    for f in synthetic_corpus(5, seed=1):
        g, v = tokenize_file(f)
        assert v.accepted and premise_violations(f) == []
        assert all(g.entries[h].positives for h in g.hole_indices)


def test_imports_are_structurally_distinct():
    g = build_file_graph(synthetic_file(0))
    imports = [e for e in g.lemmas if not e.name.startswith("def")][: 3 + 3 + 2]
    keys = {(tuple(e.tree.kind), e.tree.position, tuple(e.tree.ref)) for e in imports}
    assert len(keys) == len(imports)


def test_definition_premises_option():
    spec = dataclasses.replace(SyntheticSpec(), definition_premises=True, instantiate_rate=1.0)
    f = synthetic_file(2, spec)
    names = {h for e in f.entries() for hole in e.holes for h in hole.premises}
    assert any(n.startswith("def") for n in names)


def test_rename_keeps_graph(tmp_path):
    raw = synthetic_file(7)
    renamed = rename_file(raw, {e.name: e.name.upper() + "!" for e in raw.entries()})
    a, b = build_file_graph(raw), build_file_graph(renamed)
    assert all(x.tree.same_as(y.tree) and x.positives == y.positives
               for x, y in zip(a.entries, b.entries))
    assert {e.name for e in renamed.entries()} != {e.name for e in raw.entries()}


def test_write_corpus(tmp_path):
    paths = write_corpus(tmp_path, 3, seed=9)
    assert len(paths) == 3
    assert dump_file(load_file(paths[1])) == dump_file(synthetic_corpus(3, seed=9)[1])
