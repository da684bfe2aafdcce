"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; the lines are repeated in the
terminal summary (see ``conftest.py``) and printed when this file is run as a
script. The two learning criteria train real models and take several minutes.
"""

import functools
import json
import math
import time

import numpy as np
import pytest

from premsel.cli import main as cli_main
from premsel.config import ModelConfig, RunConfig, TrainConfig
from premsel.ingest import load_file
from premsel.metrics import average_precision, r_precision
from premsel.numerics import Tensor
from premsel.selfcheck import (
    check_alpha_equivalence, check_attention, check_feature_map, check_layer_gradients,
    check_loss_gradients, check_metrics, check_orthogonality,
)
from premsel.synthetic import synthetic_corpus, write_corpus
from premsel.tokenizer import Reject, tokenize_file
from premsel.training import evaluate, info_nce_loss, train

from conftest import FIXTURES, oversized_file

RESULTS: list[str] = []


def record(name: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def from_check(name, result, budget=None):
    ok = result.passed and (budget is None or result.seconds < budget)
    detail = (f"max dev {result.deviation:.2e} <= {result.tolerance:.0e}, "
              f"{result.seconds:.1f}s" + (f" < {budget}s" if budget else "") + f"; {result.detail}")
    record(name, ok, detail)


def test_feature_map_identity():
    from_check("feature-map identity", check_feature_map(pairs=10_000, dim=16), budget=5)


def test_attention_oracle_equivalence():
    from_check("attention oracle equivalence",
               check_attention(trees=200, max_nodes=32, heads=8), budget=60)


def test_gradient_checks():
    start = time.perf_counter()
    layer = check_layer_gradients(instances=20)
    loss = check_loss_gradients(instances=20)
    seconds = time.perf_counter() - start
    record("gradient checks",
           layer.passed and loss.passed and seconds < 300,
           f"layer {layer.deviation:.2e}, loss graph {loss.deviation:.2e} (tol 1e-4), "
           f"{seconds:.0f}s < 300s")


def test_orthogonality():
    from_check("orthogonality", check_orthogonality(steps=1000))


def test_alpha_equivalence():
    results = [check_alpha_equivalence(seed) for seed in range(3)]
    record("alpha-equivalence", all(r.passed for r in results),
           "; ".join(f"file {i}: {r.detail}" for i, r in enumerate(results)))


def test_metric_oracles():
    result = check_metrics(rankings=1000)
    worked = (average_precision([1, 2, 3], {1, 3}), r_precision([1, 2, 3], {1, 3}))
    ok = (result.passed and result.deviation == 0.0
          and round(worked[0], 4) == 0.8333 and worked[1] == 0.5)
    record("metric oracles", ok,
           f"1000 rankings, max dev {result.deviation:.1e}; AveP {worked[0]:.4f}, R-Prec {worked[1]}")


def test_loss_hand_values():
    def value(scores, pos):
        return info_nce_loss(Tensor(np.array([scores], dtype=np.float64)), [pos]).value

    got = [value([2.0], {0}), value([0.3, 0.3], {0}), value([-1.0, -1.0, -1.0], {0, 1})]
    want = [0.0, math.log(2), 2 * math.log(2)]
    dev = max(abs(g - w) for g, w in zip(got, want))
    record("loss hand-values", dev <= 1e-9,
           f"got {', '.join(f'{g:.12f}' for g in got)}; max dev {dev:.1e} <= 1e-9")


def test_filtering_fidelity():
    cases = {
        "no holes": (load_file(FIXTURES / "no_holes.json"), Reject.NO_HOLES),
        "> 2^14 tokens": (oversized_file(), Reject.TOO_LARGE),
        "cyclic": (load_file(FIXTURES / "cyclic.json"), Reject.CYCLIC),
        "control": (load_file(FIXTURES / "nat_comm.json"), None),
    }
    got = {name: tokenize_file(raw)[1].reason for name, (raw, _) in cases.items()}
    ok = all(got[name] is want for name, (_, want) in cases.items())
    record("filtering fidelity", ok,
           ", ".join(f"{n} -> {r.value if r else 'accept'}" for n, r in got.items()))


# ---------------------------------------------------------------------------
# learning checks

TRAIN_FILES, HELD_FILES = 20, 10
STEPS = 300


def learning_config(ablations=()) -> RunConfig:
    model = ModelConfig(dim=64, layers=2, heads=4, qk_dim=16, v_dim=32, ffn_dim=256,
                        dropout=0.0, ref_dropout=0.0, ablations=ablations)
    epochs = STEPS // TRAIN_FILES
    return RunConfig(model=model, train=TrainConfig(
        epochs=epochs, warmup_epochs=1, peak_lr=3e-3, weight_decay=1e-2, holes_per_batch=32,
        eval_every=epochs))


@functools.lru_cache(maxsize=None)
def learning_run(ablations: tuple, seed: int) -> dict:
    graphs = [tokenize_file(f)[0] for f in synthetic_corpus(TRAIN_FILES + HELD_FILES, seed=100 + seed)]
    train_set, held = graphs[:TRAIN_FILES], graphs[TRAIN_FILES:]
    start = time.perf_counter()
    res = train(train_set, learning_config(ablations), seed=seed,
                eval_sets={"held": held, "train": train_set})
    seconds = time.perf_counter() - start
    final = {h["split"]: h["avep"] for h in res.history if h["split"] != "train" or "avep" in h}
    return {"train": final["train"], "held": final["held"], "steps": res.steps,
            "random": evaluate(res.model, held).random_avep, "seconds": seconds}


def test_overfit_smoke():
    r = learning_run((), 0)
    ratio = r["held"] / r["random"]
    ok = r["train"] >= 0.90 and ratio >= 5 and r["steps"] <= STEPS and r["seconds"] < 600
    record("overfit smoke test", ok,
           f"train AveP {r['train']:.3f} >= 0.90 after {r['steps']} steps; held-out AveP "
           f"{r['held']:.3f} = {ratio:.1f}x random {r['random']:.3f} (>= 5x); {r['seconds']:.0f}s < 600s")


def test_ablation_ordering():
    rows, wins = [], 0
    for seed in range(3):
        full = learning_run((), seed)["held"]
        tree = learning_run(("no-tree-pe",), seed)["held"]
        var = learning_run(("no-var-res",), seed)["held"]
        holds = full >= tree and full >= var
        wins += holds
        rows.append(f"seed {seed}: full {full:.3f} / no-tree-pe {tree:.3f} / no-var-res {var:.3f}"
                    f" {'ok' if holds else 'violated'}")
    record("ablation ordering", wins >= 2, f"held on {wins}/3 seeds (need 2); " + "; ".join(rows))


def test_determinism(tmp_path, capsys):
    data = tmp_path / "data"
    write_corpus(data, 4, seed=31)
    cfg = {
        "data_dir": str(data), "cache": str(tmp_path / "corpus.ndjson"), "split_ratio": 0.75,
        "model": {"dim": 16, "layers": 1, "heads": 2, "qk_dim": 4, "v_dim": 4, "ffn_dim": 32},
        "train": {"epochs": 2, "holes_per_batch": 8},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    assert cli_main(["ingest", "--config", str(path)]) == 0
    for run in ("a", "b"):
        assert cli_main(["train", "--config", str(path), "--seed", "7",
                         "--checkpoint-dir", str(tmp_path / run)]) == 0
    capsys.readouterr()
    names = sorted(p.name for p in (tmp_path / "a").glob("*.ckpt"))
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    record("determinism", len(names) >= 3 and all(same),
           f"{sum(same)}/{len(names)} checkpoints byte-identical ({', '.join(names)})")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
