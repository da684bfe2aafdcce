"""Tree-structured linear attention.

Positions are encoded by orthogonal matrices: each tree position owns the
product of two learned primitives (one per branch direction) along its root
path. Queries and keys are rotated by their node's matrix before the feature
map, so that their similarity depends on the relative path only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import ABLATIONS, ModelConfig, UnknownMode, check_ablations
from .numerics import Parameter, Tensor
from .numerics import ops

__all__ = [
    "DegenerateDenominator",
    "skew_expm",
    "OrthogonalPrimitives",
    "PositionalCache",
    "build_positional_cache",
    "position_matrix",
    "taylor_feature_map",
    "elu_feature_map",
    "feature_dim",
    "TreeBatch",
    "linear_attention",
    "sinusoidal_encoding",
    "EncoderLayer",
    "EncoderStack",
    "ablation_variants",
]


class DegenerateDenominator(FloatingPointError):
    pass


def _init(rng: np.random.Generator, shape, scale: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * scale).astype(dtype)


# ---------------------------------------------------------------------------
# orthogonal positional encodings

_TAYLOR_ORDER = 12


def skew_expm(generator: Tensor) -> Tensor:
    """``expm(A - A^T)`` by scaling and squaring around a fixed-order Taylor series.

    The scaling exponent is chosen so that the scaled argument has infinity
    norm at most 1/2; the result is orthogonal to machine precision.
    """
    skew = generator - ops.swapaxes(generator, -1, -2)
    d = skew.shape[-1]
    norm = float(np.abs(skew.data).sum(axis=-1).max()) if skew.data.size else 0.0
    squarings = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0
    x = ops.scale(skew, 2.0 ** -squarings)
    eye = Tensor(np.eye(d, dtype=skew.dtype))
    out = eye
    for k in range(_TAYLOR_ORDER, 0, -1):
        out = eye + ops.scale(x @ out, 1.0 / k)
    for _ in range(squarings):
        out = out @ out
    return out


class OrthogonalPrimitives:
    """The two branch matrices, each the exponential of a skew-symmetric generator.

    Generators are stored in the model dtype; the exponential and everything
    built from it are evaluated in float64.
    """

    def __init__(self, dim: int, rng: np.random.Generator, dtype="float32", prefix="pe"):
        self.dim = dim
        self.left = Parameter(f"{prefix}.left", _init(rng, (dim, dim), 1 / math.sqrt(dim), dtype))
        self.right = Parameter(f"{prefix}.right", _init(rng, (dim, dim), 1 / math.sqrt(dim), dtype))

    def parameters(self) -> list[Parameter]:
        return [self.left, self.right]

    def matrices(self) -> tuple[Tensor, Tensor]:
        return (skew_expm(ops.cast(self.left, np.float64)),
                skew_expm(ops.cast(self.right, np.float64)))


@dataclass
class PositionalCache:
    """Orthogonal matrices for a set of heap positions, stacked row-wise."""

    matrices: Tensor
    rows: dict[int, int]

    def lookup(self, positions: Sequence[int]) -> Tensor:
        try:
            index = [self.rows[p] for p in positions]
        except KeyError as e:
            raise KeyError(f"position {e.args[0]} not cached") from None
        return ops.take(self.matrices, index)


def build_positional_cache(positions: Iterable[int], left: Tensor, right: Tensor) -> PositionalCache:
    """Compute ``R_1 = I``, ``R_2i = R_i B_L``, ``R_2i+1 = R_i B_R`` for every
    requested position and its ancestors, one batched product per depth."""
    wanted = set()
    for p in positions:
        p = int(p)
        if p < 1:
            raise ValueError(f"invalid heap position {p}")
        while p >= 1 and p not in wanted:
            wanted.add(p)
            p >>= 1
    by_depth: dict[int, list[int]] = {}
    for p in sorted(wanted):
        by_depth.setdefault(p.bit_length() - 1, []).append(p)

    d = left.shape[-1]
    branches = ops.stack([left, right])
    blocks = [Tensor(np.eye(d, dtype=left.dtype)[None])]
    rows = {1: 0}
    level_rows = {1: 0}
    for depth in range(1, max(by_depth) + 1):
        level = by_depth[depth]
        parents = ops.take(blocks[-1], [level_rows[p >> 1] for p in level])
        steps = ops.take(branches, [p & 1 for p in level])
        blocks.append(parents @ steps)
        level_rows = {p: i for i, p in enumerate(level)}
        offset = len(rows)
        for i, p in enumerate(level):
            rows[p] = offset + i
    return PositionalCache(ops.concat(blocks), rows)


def position_matrix(path: Sequence[str], left: Tensor, right: Tensor) -> Tensor:
    """Product of branch matrices along a root path such as ``"LRL"``."""
    out = Tensor(np.eye(left.shape[-1], dtype=left.dtype))
    for step in path:
        if step not in ("L", "R"):
            raise ValueError(f"path steps must be 'L' or 'R', got {step!r}")
        out = out @ (left if step == "L" else right)
    return out


# ---------------------------------------------------------------------------
# feature maps


def taylor_feature_map(x: Tensor) -> Tensor:
    """``[1] ; x ; sqrt(1/2) vec(x x^T)`` over the last axis."""
    ones = Tensor(np.ones(x.shape[:-1] + (1,), dtype=x.dtype))
    quad = ops.scale(ops.flatten(ops.outer(x, x)), math.sqrt(0.5))
    return ops.concat([ones, x, quad], axis=-1)


def elu_feature_map(x: Tensor) -> Tensor:
    return ops.elu(x) + 1


def feature_dim(d: int, taylor: bool = True) -> int:
    return 1 + d + d * d if taylor else d


# ---------------------------------------------------------------------------
# linear attention over a batch of trees


@dataclass(frozen=True)
class TreeBatch:
    """Layout of several trees whose nodes are concatenated tree by tree.

    ``gather`` maps the padded ``(trees, width)`` grid to node rows, with
    ``num_nodes`` standing for padding; ``scatter`` maps nodes back to grid
    cells.
    """

    sizes: tuple[int, ...]
    gather: np.ndarray
    scatter: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> TreeBatch:
        sizes = tuple(int(s) for s in sizes)
        if not sizes or min(sizes) < 1:
            raise ValueError("every tree needs at least one node")
        width = max(sizes)
        n = sum(sizes)
        gather = np.full((len(sizes), width), n, dtype=np.int64)
        scatter = np.empty(n, dtype=np.int64)
        offset = 0
        for t, s in enumerate(sizes):
            gather[t, :s] = np.arange(offset, offset + s)
            scatter[offset:offset + s] = t * width + np.arange(s)
            offset += s
        return cls(sizes, gather.reshape(-1), scatter, gather.reshape(len(sizes), width) < n)

    @property
    def num_nodes(self) -> int:
        return len(self.scatter)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def roots(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)


def _rotate(x: Tensor, rot: Tensor) -> Tensor:
    # x: (N, H, d), rot: (N, d, d) -> R_n x_{n,h}
    n, h, d = x.shape
    out = ops.reshape(rot, (n, 1, d, d)) @ ops.reshape(x, (n, h, d, 1))
    return ops.reshape(out, (n, h, d))


def _pad(x: Tensor, batch: TreeBatch) -> Tensor:
    # (N, H, d) -> (T, H, L, d) with zero padding
    n, h, d = x.shape
    padded = ops.concat([x, Tensor(np.zeros((1, h, d), dtype=x.dtype))])
    t, width = batch.shape
    grid = ops.reshape(ops.take(padded, batch.gather), (t, width, h, d))
    return ops.transpose(grid, (0, 2, 1, 3))


def linear_attention(q: Tensor, k: Tensor, v: Tensor, batch: TreeBatch,
                     rot: Tensor | None = None, feature_map=taylor_feature_map) -> Tensor:
    """Linearized attention within each tree of ``batch``.

    ``q``, ``k``: (N, H, d); ``v``: (N, H, e); ``rot``: (N, d, d) or None.
    Returns (N, H, e) with ``a_i = phi(R_i q_i) . S / phi(R_i q_i) . z`` where
    ``S = sum_j phi(R_j k_j) (x) v_j`` and ``z = sum_j phi(R_j k_j)`` run over the
    tree of node ``i``.
    """
    if q.shape != k.shape or q.shape[:2] != v.shape[:2] or q.shape[0] != batch.num_nodes:
        raise ops.ShapeMismatch("linear_attention", q.shape, v.shape)
    if rot is not None:
        q = _rotate(q, rot)
        k = _rotate(k, rot)
    t, width = batch.shape
    mask = Tensor(batch.mask.reshape(t, 1, width, 1).astype(q.dtype))
    fq = feature_map(_pad(q, batch))
    fk = feature_map(_pad(k, batch)) * mask
    vp = _pad(v, batch)
    state = ops.swapaxes(fk, -1, -2) @ vp                    # (T, H, F, e)
    norm = ops.sum(fk, axis=2, keepdims=True)               # (T, H, 1, F)
    num = fq @ state                                        # (T, H, L, e)
    den = ops.sum(fq * norm, axis=-1, keepdims=True)        # (T, H, L, 1)
    valid = np.broadcast_to(batch.mask.reshape(t, 1, width, 1), den.shape)
    if np.any(np.abs(den.data[valid]) < 1e-6):
        raise DegenerateDenominator("attention normalizer below 1e-6")
    out = ops.transpose(num / den, (0, 2, 1, 3))            # (T, L, H, e)
    h, e = v.shape[1], v.shape[2]
    return ops.take(ops.reshape(out, (t * width, h, e)), batch.scatter)


def sinusoidal_encoding(index: np.ndarray, dim: int, dtype="float32") -> np.ndarray:
    """Standard additive sinusoids for sequence positions ``index``."""
    index = np.asarray(index, dtype=np.float64)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    out = np.zeros((len(index), dim))
    out[:, 0::2] = np.sin(index * freq)
    out[:, 1::2] = np.cos(index * freq)[:, : dim // 2]
    return out.astype(dtype)


# ---------------------------------------------------------------------------
# layers


class EncoderLayer:
    """Pre-norm attention block followed by a pre-norm SwiGLU block."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "layer"):
        dt = cfg.dtype
        d, h = cfg.dim, cfg.heads
        self.cfg = cfg
        self.taylor = "no-taylor" not in cfg.ablations
        p = lambda name, arr: Parameter(f"{prefix}.{name}", arr)
        self.norm_attn = p("norm_attn", np.ones(d, dtype=dt))
        self.wq = p("wq", _init(rng, (d, h * cfg.qk_dim), 1 / math.sqrt(d), dt))
        self.wk = p("wk", _init(rng, (d, h * cfg.qk_dim), 1 / math.sqrt(d), dt))
        self.wv = p("wv", _init(rng, (d, h * cfg.v_dim), 1 / math.sqrt(d), dt))
        self.wo = p("wo", _init(rng, (h * cfg.v_dim, d), 1 / math.sqrt(h * cfg.v_dim), dt))
        self.norm_ffn = p("norm_ffn", np.ones(d, dtype=dt))
        self.w_gate = p("w_gate", _init(rng, (d, cfg.ffn_dim), 1 / math.sqrt(d), dt))
        self.w_up = p("w_up", _init(rng, (d, cfg.ffn_dim), 1 / math.sqrt(d), dt))
        self.w_down = p("w_down", _init(rng, (cfg.ffn_dim, d), 1 / math.sqrt(cfg.ffn_dim), dt))

    def parameters(self) -> list[Parameter]:
        return [self.norm_attn, self.wq, self.wk, self.wv, self.wo,
                self.norm_ffn, self.w_gate, self.w_up, self.w_down]

    def attention(self, x: Tensor, batch: TreeBatch, rot: Tensor | None) -> Tensor:
        cfg = self.cfg
        n = x.shape[0]
        q = ops.reshape(x @ self.wq, (n, cfg.heads, cfg.qk_dim))
        k = ops.reshape(x @ self.wk, (n, cfg.heads, cfg.qk_dim))
        v = ops.reshape(x @ self.wv, (n, cfg.heads, cfg.v_dim))
        fmap = taylor_feature_map if self.taylor else elu_feature_map
        a = linear_attention(q, k, v, batch, rot, fmap)
        return ops.reshape(a, (n, cfg.heads * cfg.v_dim)) @ self.wo

    def feed_forward(self, x: Tensor) -> Tensor:
        return (ops.silu(x @ self.w_gate) * (x @ self.w_up)) @ self.w_down

    def forward(self, x: Tensor, batch: TreeBatch, rot: Tensor | None = None,
                train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        p = self.cfg.dropout
        x = x + ops.dropout(self.attention(ops.rms_norm(x, self.norm_attn), batch, rot),
                            p, rng, train)
        x = x + ops.dropout(self.feed_forward(ops.rms_norm(x, self.norm_ffn)), p, rng, train)
        return x


class EncoderStack:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "encoder"):
        self.cfg = cfg
        self.expand = Parameter(f"{prefix}.expand",
                                _init(rng, (cfg.emb_dim, cfg.dim), 1 / math.sqrt(cfg.emb_dim),
                                      cfg.dtype))
        self.layers = [EncoderLayer(cfg, rng, f"{prefix}.layers.{i}") for i in range(cfg.layers)]
        self.norm = Parameter(f"{prefix}.norm", np.ones(cfg.dim, dtype=cfg.dtype))

    def parameters(self) -> list[Parameter]:
        out = [self.expand]
        for layer in self.layers:
            out.extend(layer.parameters())
        out.append(self.norm)
        return out

    def forward(self, emb: Tensor, batch: TreeBatch, rot: Tensor | None = None,
                train: bool = False, rng: np.random.Generator | None = None,
                offsets: np.ndarray | None = None) -> Tensor:
        """``emb`` is (N, emb_dim); ``offsets`` holds per-node sequential indices
        for the sinusoidal ablation and is ignored otherwise."""
        x = emb @ self.expand
        if "no-tree-pe" in self.cfg.ablations:
            if offsets is None:
                offsets = np.concatenate([np.arange(s) for s in batch.sizes])
            x = x + Tensor(sinusoidal_encoding(offsets, self.cfg.dim, x.dtype))
            rot = None
        for layer in self.layers:
            x = layer.forward(x, batch, rot, train, rng)
        return ops.rms_norm(x, self.norm)


def ablation_variants(modes: Iterable[str]) -> dict[str, object]:
    """Components substituted under the given ablation modes."""
    modes = check_ablations(modes)
    return {
        "feature_map": elu_feature_map if "no-taylor" in modes else taylor_feature_map,
        "tree_positions": "no-tree-pe" not in modes,
        "sinusoids": "no-tree-pe" in modes,
        "variable_resolution": "no-var-res" not in modes,
    }
