"""Built-in oracle checks, shared by the command line and the test-suite.

Every check returns a :class:`CheckResult` holding the worst deviation found
and the tolerance it was held to.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .attention import (
    EncoderLayer, OrthogonalPrimitives, TreeBatch, build_positional_cache, linear_attention,
    taylor_feature_map,
)
from .config import ModelConfig
from .metrics import average_precision, r_precision
from .model import PremiseModel, legality_mask
from .numerics import AdamW, Tensor, backward
from .numerics import ops
from .synthetic import SyntheticSpec, rename_file, synthetic_file
from .tokenizer import build_file_graph
from .training import info_nce_loss

__all__ = [
    "CheckResult",
    "check_feature_map",
    "random_orthogonal",
    "dense_attention",
    "check_attention",
    "relative_error",
    "check_layer_gradients",
    "check_loss_gradients",
    "brute_force_average_precision",
    "brute_force_r_precision",
    "check_metrics",
    "check_alpha_equivalence",
    "check_orthogonality",
    "run_all",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<24} max dev {self.deviation:.3e} "
                f"(tol {self.tolerance:.0e}, {self.seconds:.1f}s){'  ' + self.detail if self.detail else ''}")


def _timed(name: str, tolerance: float, fn: Callable[[], tuple[float, str]]) -> CheckResult:
    start = time.perf_counter()
    dev, detail = fn()
    return CheckResult(name, bool(dev <= tolerance), float(dev), tolerance,
                       time.perf_counter() - start, detail)


# ---------------------------------------------------------------------------
# feature map


def check_feature_map(pairs: int = 10_000, dim: int = 16, seed: int = 0,
                      tolerance: float = 1e-6) -> CheckResult:
    """``phi(q).phi(k)`` against ``1 + q.k + (q.k)^2 / 2`` for random pairs."""
    def run():
        rng = np.random.default_rng(seed)
        q = rng.standard_normal((pairs, dim))
        k = rng.standard_normal((pairs, dim))
        lhs = np.einsum("nf,nf->n", taylor_feature_map(Tensor(q)).data,
                        taylor_feature_map(Tensor(k)).data)
        s = np.einsum("nd,nd->n", q, k)
        return float(np.abs(lhs - (1 + s + 0.5 * s * s)).max()), f"{pairs} pairs, d={dim}"
    return _timed("feature map identity", tolerance, run)


# ---------------------------------------------------------------------------
# attention


def random_orthogonal(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, d, d)))
    return q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[:, None, :]


def dense_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, rot: np.ndarray | None,
                    feature_map=taylor_feature_map) -> np.ndarray:
    """Quadratic oracle for one tree: explicit pair weights, then normalize.

    For the Taylor map the weights come straight from the kernel
    ``1 + s + s^2/2`` on rotated dot products, without any feature vectors.
    """
    if rot is not None:
        q = np.einsum("nij,nhj->nhi", rot, q)
        k = np.einsum("nij,nhj->nhi", rot, k)
    if feature_map is taylor_feature_map:
        s = np.einsum("ihd,jhd->hij", q, k)
        w = 1 + s + 0.5 * s * s
    else:
        w = np.einsum("ihf,jhf->hij", feature_map(Tensor(q)).data, feature_map(Tensor(k)).data)
    out = np.einsum("hij,jhe->ihe", w, v)
    return out / w.sum(axis=-1).T[:, :, None]


def check_attention(trees: int = 50, max_nodes: int = 32, heads: int = 8, qk_dim: int = 16,
                    v_dim: int = 32, seed: int = 0, tolerance: float = 1e-5) -> CheckResult:
    """Batched linear attention against the dense oracle, tree by tree (float64)."""
    def run():
        rng = np.random.default_rng(seed)
        sizes = rng.integers(1, max_nodes + 1, size=trees)
        n = int(sizes.sum())
        q = rng.standard_normal((n, heads, qk_dim))
        k = rng.standard_normal((n, heads, qk_dim))
        v = rng.standard_normal((n, heads, v_dim))
        rot = random_orthogonal(rng, n, qk_dim)
        batch = TreeBatch.from_sizes(sizes)
        fast = linear_attention(Tensor(q), Tensor(k), Tensor(v), batch, Tensor(rot)).data
        worst = 0.0
        offset = 0
        for s in sizes:
            sl = slice(offset, offset + int(s))
            ref = dense_attention(q[sl], k[sl], v[sl], rot[sl])
            worst = max(worst, float(np.abs(fast[sl] - ref).max()))
            offset += int(s)
        return worst, f"{trees} trees, {heads} heads"
    return _timed("attention equivalence", tolerance, run)


# ---------------------------------------------------------------------------
# orthogonality under training


def check_orthogonality(steps: int = 1000, dim: int = 16, depth: int = 6, seed: int = 0,
                        lr: float = 1e-2, tolerance: float = 1e-5) -> CheckResult:
    """AdamW on the branch generators against a fresh random objective each
    step; afterwards both primitives and every cached matrix must be orthogonal."""
    def run():
        rng = np.random.default_rng(seed)
        prim = OrthogonalPrimitives(dim, rng, dtype="float32")
        opt = AdamW(prim.parameters(), lr=lr, weight_decay=1e-2)
        positions = range(1, 2 ** (depth + 1))
        for _ in range(steps):
            opt.zero_grad()
            cache = build_positional_cache(positions, *prim.matrices())
            target = Tensor(rng.standard_normal(cache.matrices.shape))
            backward(ops.sum(cache.matrices * target))
            opt.step()
        left, right = prim.matrices()
        cache = build_positional_cache(positions, left, right)
        mats = np.concatenate([left.data[None], right.data[None], cache.matrices.data])
        eye = np.eye(dim)
        dev = float(np.abs(np.einsum("nji,njk->nik", mats, mats) - eye).max())
        # what the encoder actually consumes is the model-dtype copy
        m32 = mats.astype(np.float32).astype(np.float64)
        dev32 = float(np.abs(np.einsum("nji,njk->nik", m32, m32) - eye).max())
        drift = float(np.abs(prim.left.data).max())
        return max(dev, dev32), (f"{steps} steps, {len(mats)} matrices, f64 {dev:.1e}, "
                                 f"f32 {dev32:.1e}, max |generator| {drift:.2f}")
    return _timed("orthogonality", tolerance, run)


# ---------------------------------------------------------------------------
# gradients


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest absolute difference, relative to the largest numeric magnitude."""
    scale = max(float(np.abs(numeric).max(initial=0.0)), float(np.abs(analytic).max(initial=0.0)),
                floor)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def _finite_differences(loss_fn, params, rng, per_param: int, h: float):
    worst = 0.0
    worst_name = ""
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            num[j] = (up - down) / (2 * h)
        err = relative_error(analytic[p.name].reshape(-1)[idx], num)
        if err > worst:
            worst, worst_name = err, p.name
    return worst, worst_name


def _small_config(**kw) -> ModelConfig:
    base = dict(dim=16, layers=1, heads=2, qk_dim=4, v_dim=4, ffn_dim=24, dropout=0.0,
                ref_dropout=0.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def check_layer_gradients(instances: int = 20, seed: int = 0, per_param: int = 6,
                          h: float = 1e-6, tolerance: float = 1e-4) -> CheckResult:
    """One encoder layer with tree rotations: backprop vs central differences."""
    def run():
        rng = np.random.default_rng(seed)
        cfg = _small_config()
        worst, where = 0.0, ""
        for _ in range(instances):
            layer = EncoderLayer(cfg, rng, prefix="layer")
            # move the gains off one so their gradients are generic
            layer.norm_attn.data += 0.1 * rng.standard_normal(cfg.dim)
            layer.norm_ffn.data += 0.1 * rng.standard_normal(cfg.dim)
            sizes = rng.integers(1, 8, size=3)
            batch = TreeBatch.from_sizes(sizes)
            n = int(sizes.sum())
            x = Tensor(rng.standard_normal((n, cfg.dim)))
            rot = Tensor(random_orthogonal(rng, n, cfg.qk_dim))
            target = Tensor(rng.standard_normal((n, cfg.dim)))

            def loss():
                return ops.sum(layer.forward(x, batch, rot) * target)

            err, name = _finite_differences(loss, layer.parameters(), rng, per_param, h)
            if err > worst:
                worst, where = err, name
        return worst, f"{instances} instances, worst at {where or '-'}"
    return _timed("layer gradients", tolerance, run)


def check_loss_gradients(instances: int = 20, seed: int = 0, per_param: int = 3,
                         h: float = 1e-6, tolerance: float = 1e-4) -> CheckResult:
    """The whole model and contrastive loss on small synthetic files (float64)."""
    spec = SyntheticSpec(families=2, family_size=2, theorems=1, holes=3, definitions=1,
                         relations=2, functions=1, max_vars=2)

    def run():
        rng = np.random.default_rng(seed)
        worst, where = 0.0, ""
        for i in range(instances):
            graph = build_file_graph(synthetic_file(seed * 1000 + i, spec))
            model = PremiseModel(_small_config(), seed=i)
            for p in model.parameters():
                if p.name.endswith(("norm_attn", "norm_ffn", "encoder.norm", "scorer.weight")):
                    p.data += 0.1 * rng.standard_normal(p.data.shape)
            holes = graph.hole_indices
            mask = legality_mask([graph.entries[j].cutoff for j in holes], graph.num_lemmas)
            positives = [graph.entries[j].positives for j in holes]

            def loss():
                enc = model.encode_file(graph)
                return info_nce_loss(model.score(enc), positives, mask).total

            err, name = _finite_differences(loss, model.parameters(), rng, per_param, h)
            if err > worst:
                worst, where = err, name
        return worst, f"{instances} instances, worst at {where or '-'}"
    return _timed("loss gradients", tolerance, run)


# ---------------------------------------------------------------------------
# metrics


def brute_force_average_precision(ranking, positives) -> float:
    """Enumerate every prefix; average precision@k over prefixes ending in a positive."""
    positives = set(positives)
    precisions = []
    for k in range(1, len(ranking) + 1):
        prefix = ranking[:k]
        if prefix[-1] in positives:
            precisions.append(Fraction(sum(c in positives for c in prefix), k))
    return float(sum(precisions, Fraction(0)) / len(positives))


def brute_force_r_precision(ranking, positives) -> float:
    positives = set(positives)
    return float(Fraction(sum(c in positives for c in ranking[:len(positives)]), len(positives)))


def check_metrics(rankings: int = 1000, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(rankings):
            n = int(rng.integers(1, 40))
            ranking = [int(c) for c in rng.permutation(n)]
            positives = set(int(c) for c in rng.choice(n, size=int(rng.integers(1, n + 1)),
                                                       replace=False))
            worst = max(worst,
                        abs(average_precision(ranking, positives)
                            - brute_force_average_precision(ranking, positives)),
                        abs(r_precision(ranking, positives)
                            - brute_force_r_precision(ranking, positives)))
        worked = [
            (average_precision([0, 1, 2], {0, 2}), 5 / 6),
            (average_precision([0, 1, 2, 3], {1, 3}), 0.5),
            (r_precision([0, 1, 2], {0, 2}), 0.5),
        ]
        for got, want in worked:
            worst = max(worst, abs(got - want))
        return worst, f"{rankings} random rankings + worked values"
    # both sides round an exact rational once, so agreement is bit-exact
    return _timed("metric oracles", 0.0, run)


# ---------------------------------------------------------------------------
# renaming


def check_alpha_equivalence(seed: int = 0, cfg: ModelConfig | None = None) -> CheckResult:
    """Rename every binder and entry of a synthetic file; nothing downstream may change."""
    cfg = cfg or ModelConfig(dim=32, layers=2, heads=2, ffn_dim=64)

    def run():
        raw = synthetic_file(seed)
        mapping = {e.name: f"renamed{i}" for i, e in enumerate(raw.entries())}
        a = build_file_graph(raw)
        b = build_file_graph(rename_file(raw, mapping, binder_suffix="_r"))
        streams = all(x.tree.same_as(y.tree) for x, y in zip(a.entries, b.entries))
        labels = all(x.positives == y.positives for x, y in zip(a.entries, b.entries))
        model = PremiseModel(cfg, seed)
        ea, eb = model.encode_file(a), model.encode_file(b)
        summaries = (np.array_equal(ea.lemmas.data, eb.lemmas.data)
                     and np.array_equal(ea.holes.data, eb.holes.data))
        scores = all(np.array_equal(x, y) for x, y in
                     zip(model.legal_scores(a, ea), model.legal_scores(b, eb)))
        ok = streams and labels and summaries and scores
        dev = 0.0 if ok else float(np.abs(ea.holes.data - eb.holes.data).max(initial=1.0))
        detail = f"tokens={streams} labels={labels} summaries={summaries} scores={scores}"
        return (dev if ok else max(dev, 1.0)), detail
    return _timed("alpha equivalence", 0.0, run)


def run_all(quick: bool = True) -> list[CheckResult]:
    """The self-test battery; ``quick`` trims instance counts for interactive use."""
    return [
        check_feature_map(),
        check_attention(trees=50 if quick else 200),
        check_orthogonality(steps=200 if quick else 1000),
        check_layer_gradients(instances=5 if quick else 20),
        check_loss_gradients(instances=3 if quick else 20),
        check_metrics(),
        check_alpha_equivalence(),
    ]

