"""Walk one exported file through ingestion and tokenization.

Run from the repository root:  python3 demos/tokenize_file.py
"""

from pathlib import Path

import numpy as np

from premsel.ingest import collect_scope, load_file
from premsel.tokenizer import NodeKind, tokenize_file

path = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "nat_comm.json"
raw = load_file(path)

# scope order is global, then local, then private; the ordinal is the index
for ordinal, item in enumerate(collect_scope(raw)):
    print(f"{ordinal:2d}  {item.section:8s} {item.name}  holes={len(item.holes)}")

graph, verdict = tokenize_file(raw)
print("\nverdict:", verdict, "| lemmas", graph.num_lemmas, "| holes", graph.num_holes)

# entries that only depend on earlier levels share a level and are encoded together
for k, level in enumerate(graph.levels):
    print(f"level {k}: {[graph.entries[i].name for i in level]}")

# one hole's folded goal as a binarized tree
hole = graph.entries[graph.hole_indices[3]]
t = hole.tree
print(f"\n{hole.name}: {len(t)} nodes, cutoff {hole.cutoff}, positives {sorted(hole.positives)}")
for i in range(len(t)):
    kind = NodeKind(t.kind[i]).name
    extra = ""
    if kind == "VAR":
        extra = f"-> binder node {t.ref[i]}"
    elif kind == "REF":
        extra = f"-> {graph.entries[t.ref[i]].name}"
    print(f"  {'  ' * int(t.depth[i])}{kind:6s} pos={t.position[i]:<5d} {extra}")

# names defined at or after the cutoff are masked as [oos]
print("\n[oos] tokens:", int(np.sum(t.kind == NodeKind.OOS)))
