"""Contrastive training over files and evaluation of the resulting rankings."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import ModelConfig, RunConfig
from .metrics import RankingReport
from .model import PremiseModel, legality_mask
from .numerics import AdamW, Tensor, backward, load_into, lr_schedule, read_checkpoint, save_checkpoint
from .numerics import ops
from .tokenizer import FileGraph

__all__ = [
    "NonFiniteLoss",
    "LossReport",
    "info_nce_loss",
    "Split",
    "split_corpus",
    "Batch",
    "sample_batch",
    "evaluate",
    "TrainResult",
    "train",
    "checkpoint_config",
    "load_model",
]

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class LossReport:
    total: Tensor
    per_hole: np.ndarray
    positives: int
    negatives: int
    empty_holes: int

    @property
    def value(self) -> float:
        return self.total.item()


def info_nce_loss(scores: Tensor, positives: Sequence[frozenset[int] | set[int]],
                  legal: np.ndarray | None = None) -> LossReport:
    """Multi-positive InfoNCE summed over holes.

    Each positive of a hole is contrasted against all of that hole's negatives
    (never against the other positives):
    ``L_h = sum_p -log(e^f(p) / (e^f(p) + sum_n e^f(n)))``.
    ``legal`` masks out causally illegal pairs entirely.
    """
    nh, nl = scores.shape
    legal = np.ones((nh, nl), dtype=bool) if legal is None else np.asarray(legal, dtype=bool)
    pos = np.zeros((nh, nl), dtype=bool)
    for h, ps in enumerate(positives):
        for p in ps:
            pos[h, p] = True
    pos &= legal
    neg = legal & ~pos
    lse_neg = ops.logsumexp(scores, axis=1, mask=neg)                    # (nh,)
    margin = ops.reshape(lse_neg, (nh, 1)) - scores
    # softplus(-inf) is exactly 0 when a hole has no negatives
    with np.errstate(invalid="ignore"):
        terms = ops.softplus(margin) * Tensor(pos.astype(scores.dtype))
    per_hole = ops.sum(terms, axis=1)
    return LossReport(ops.sum(per_hole), per_hole.data.copy(), int(pos.sum()), int(neg.sum()),
                      int((~pos.any(axis=1)).sum()))


# ---------------------------------------------------------------------------
# data splits and batches


@dataclass
class Split:
    train: list
    id_eval: list
    ood_eval: list
    dropped: list = field(default_factory=list)


def split_corpus(files: Sequence, ratio: float = 0.85, seed: int = 0,
                 max_tokens: int = 2 ** 14, size: Callable | None = None) -> Split:
    """Seeded train/evaluation split before size filtering.

    Oversized training files are dropped; oversized evaluation files form the
    out-of-distribution set.
    """
    size = size or (lambda f: f.total_tokens)
    order = np.random.default_rng(seed).permutation(len(files))
    n_train = int(round(ratio * len(files)))
    split = Split([], [], [])
    for rank, i in enumerate(order):
        f = files[i]
        big = size(f) > max_tokens
        if rank < n_train:
            (split.dropped if big else split.train).append(f)
        else:
            (split.ood_eval if big else split.id_eval).append(f)
    return split


@dataclass
class Batch:
    file: int
    holes: tuple[int, ...]
    epoch: int
    step: int


def sample_batch(graph: FileGraph, rng: np.random.Generator, holes: int,
                 file: int = 0, epoch: int = 0, step: int = 0) -> Batch:
    available = graph.hole_indices
    k = min(holes, len(available))
    chosen = rng.choice(len(available), size=k, replace=False)
    return Batch(file, tuple(available[i] for i in sorted(chosen)), epoch, step)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: PremiseModel, graphs: Sequence[FileGraph], split: str = "eval") -> RankingReport:
    report = RankingReport(split)
    for g in graphs:
        if g.num_holes == 0:
            continue
        enc = model.encode_file(g, train=False)
        for idx, scores in zip(enc.hole_indices, model.legal_scores(g, enc)):
            report.add(g.name, g.entries[idx].name, scores, g.entries[idx].positives)
    return report


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: PremiseModel
    history: list[dict]
    best_epoch: int | None
    best_avep: float | None
    steps: int


def _write_record(fh, record: Mapping) -> None:
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def checkpoint_config(config: RunConfig, seed: int) -> dict:
    """What a checkpoint records: model shape, training setup and seed, no paths."""
    d = config.to_dict()
    return {"model": d["model"], "train": d["train"], "seed": seed}


def load_model(path) -> PremiseModel:
    """Rebuild a model from a checkpoint written by :func:`train`."""
    stored, arrays = read_checkpoint(path)
    cfg = dict(stored["model"])
    cfg["ablations"] = tuple(cfg.get("ablations", ()))
    model = PremiseModel(ModelConfig(**cfg), seed=stored.get("seed", 0))
    load_into(model.parameters(), arrays)
    return model


def train(corpus: Sequence[FileGraph], config: RunConfig, seed: int = 0,
          eval_sets: Mapping[str, Sequence[FileGraph]] | None = None,
          out_dir: str | os.PathLike | None = None,
          on_epoch: Callable[[dict], None] | None = None,
          model: PremiseModel | None = None) -> TrainResult:
    """Train a fresh model on ``corpus`` (one file per step).

    Writes ``epoch-XXX.ckpt`` and ``metrics.ndjson`` into ``out_dir`` when
    given, plus ``best.ckpt`` tracking the best AveP on the first evaluation
    set. A non-finite loss aborts with :class:`NonFiniteLoss`; checkpoints
    written so far are kept.
    """
    tc = config.train
    corpus = [g for g in corpus if g.num_holes > 0]
    if not corpus:
        raise ValueError("training corpus has no files with holes")
    model = model or PremiseModel(config.model, seed)
    opt = AdamW(model.parameters(), lr=tc.peak_lr, beta1=tc.beta1, beta2=tc.beta2,
                weight_decay=tc.weight_decay)
    rng = np.random.default_rng(seed)
    eval_sets = dict(eval_sets or {})
    out = Path(out_dir) if out_dir is not None else None
    meta = checkpoint_config(config, seed)
    metrics_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.ndjson", "w", encoding="utf-8")

    steps_per_epoch = math.ceil(len(corpus) / tc.files_per_batch)
    total_steps = tc.epochs * steps_per_epoch
    if tc.max_steps is not None:
        total_steps = min(total_steps, tc.max_steps)
    history: list[dict] = []
    best_epoch = best_avep = None
    step = 0
    try:
        for epoch in range(tc.epochs):
            if step >= total_steps:
                break
            order = rng.permutation(len(corpus))
            losses = []
            for start in range(0, len(order), tc.files_per_batch):
                if step >= total_steps:
                    break
                lr = lr_schedule(step / steps_per_epoch, tc.epochs, tc.warmup_epochs,
                                 tc.peak_lr, tc.final_lr)
                opt.zero_grad()
                loss_value = 0.0
                for fi in order[start:start + tc.files_per_batch]:
                    graph = corpus[fi]
                    batch = sample_batch(graph, rng, tc.holes_per_batch, int(fi), epoch, step)
                    enc = model.encode_file(graph, train=True, rng=rng, holes=batch.holes)
                    scores = model.score(enc)
                    cutoffs = [graph.entries[h].cutoff for h in batch.holes]
                    report = info_nce_loss(scores, [graph.entries[h].positives for h in batch.holes],
                                           legality_mask(cutoffs, graph.num_lemmas))
                    if not np.isfinite(report.value):
                        raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, step {step}")
                    backward(report.total)
                    loss_value += report.value
                opt.step(lr)
                losses.append(loss_value)
                step += 1

            record = {"epoch": epoch, "split": "train", "loss": float(np.mean(losses)),
                      "steps": step}
            history.append(record)
            _write_record(metrics_fh, record)
            epoch_record = dict(record)
            if (epoch + 1) % tc.eval_every == 0 or step >= total_steps:
                for name, graphs in eval_sets.items():
                    rep = evaluate(model, graphs, name)
                    rec = {"epoch": epoch, "split": name, "avep": rep.avep, "rprec": rep.rprec,
                           "loss": None}
                    history.append(rec)
                    _write_record(metrics_fh, rec)
                    epoch_record[name] = rep.summary()
                    if name == next(iter(eval_sets)) and (best_avep is None or rep.avep > best_avep):
                        best_avep, best_epoch = rep.avep, epoch
                        if out is not None:
                            save_checkpoint(out / "best.ckpt", model.parameters(), meta)
            if out is not None:
                save_checkpoint(out / f"epoch-{epoch:03d}.ckpt", model.parameters(), meta)
            if on_epoch is not None:
                on_epoch(epoch_record)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return TrainResult(model, history, best_epoch, best_avep, step)
