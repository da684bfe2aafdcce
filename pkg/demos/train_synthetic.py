"""Train a small model on a synthetic corpus and rank premises for one hole.

Takes a minute or two on a laptop CPU.
Run from the repository root:  python3 demos/train_synthetic.py
"""

from premsel.config import ModelConfig, RunConfig, TrainConfig
from premsel.metrics import rank_candidates
from premsel.synthetic import synthetic_corpus
from premsel.tokenizer import tokenize_file
from premsel.training import evaluate, train

# each file has imports, local definitions, rule families and theorem holes
graphs = [tokenize_file(f)[0] for f in synthetic_corpus(16, seed=100)]
train_set, held = graphs[:12], graphs[12:]
print(f"{len(train_set)} training files, {len(held)} held out, "
      f"{sum(g.num_holes for g in graphs)} holes in total")

cfg = RunConfig(
    model=ModelConfig(dim=64, layers=2, heads=4, ffn_dim=256, dropout=0.0, ref_dropout=0.0),
    train=TrainConfig(epochs=12, warmup_epochs=1, peak_lr=3e-3, eval_every=4),
)


def show(rec):
    msg = f"epoch {rec['epoch']:2d}  loss {rec['loss']:.3f}"
    if "held" in rec:
        msg += f"  held-out AveP {rec['held']['avep']:.3f}"
    print(msg)


result = train(train_set, cfg, seed=0, eval_sets={"held": held}, on_epoch=show)

report = evaluate(result.model, held)
print(f"\nheld-out AveP {report.avep:.3f}  R-Prec {report.rprec:.3f}  "
      f"random AveP {report.random_avep:.3f}")

# the ranking for one held-out hole; '+' marks a true premise
g = held[0]
idx = g.hole_indices[0]
enc = result.model.encode_file(g, holes=[idx])
scores = result.model.legal_scores(g, enc)[0]
print(f"\n{g.name} / {g.entries[idx].name}")
for rank, c in enumerate(rank_candidates(scores)[:8], start=1):
    mark = "+" if c in g.entries[idx].positives else " "
    print(f"{rank:2d} {mark} {scores[c]:8.3f}  {g.entries[c].name}")
