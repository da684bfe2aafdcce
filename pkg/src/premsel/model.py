"""File-level encoding and hole/lemma scoring.

Entries of a file are encoded one dependency level at a time. Each encoded
lemma's ``[sos]`` output is written to a scope table, from which later levels
read their lemma references. Variables are embedded as a shared base vector
rotated by the relative position of the variable and its binder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import (
    EncoderStack, OrthogonalPrimitives, PositionalCache, TreeBatch, build_positional_cache,
)
from .config import ModelConfig
from .numerics import Parameter, Tensor
from .numerics import ops
from .tokenizer import STATIC_KINDS, FileGraph, NodeKind

__all__ = ["MissingPosition", "ScopeTable", "EncodedFile", "PremiseModel", "score_pairs",
           "legality_mask"]


SCORER_INIT = 4.0


class MissingPosition(KeyError):
    pass


class ScopeTable:
    """Write-once map from scope ordinal to an encoded summary row."""

    def __init__(self):
        self._blocks: list[Tensor] = []
        self._rows: dict[int, int] = {}
        self._level: dict[int, int] = {}
        self._size = 0
        self._cached: Tensor | None = None

    def __contains__(self, ordinal: int) -> bool:
        return ordinal in self._rows

    def __len__(self) -> int:
        return self._size

    def level_of(self, ordinal: int) -> int:
        return self._level[ordinal]

    def write(self, ordinals: Sequence[int], block: Tensor, level: int) -> None:
        if block.shape[0] != len(ordinals):
            raise ValueError("one summary row per ordinal expected")
        for i, o in enumerate(ordinals):
            if o in self._rows:
                raise ValueError(f"scope ordinal {o} already written")
            self._rows[o] = self._size + i
            self._level[o] = level
        self._size += len(ordinals)
        self._blocks.append(block)
        self._cached = None

    def lookup(self, ordinals: Sequence[int]) -> Tensor:
        if self._cached is None:
            self._cached = ops.concat(self._blocks) if len(self._blocks) > 1 else self._blocks[0]
        return ops.take(self._cached, [self._rows[o] for o in ordinals])

    def snapshot(self) -> dict[int, np.ndarray]:
        table = ops.concat(self._blocks) if self._blocks else None
        return {o: table.data[r].copy() for o, r in self._rows.items()}


@dataclass
class EncodedFile:
    lemmas: Tensor                  # (num_lemmas, dim), row = ordinal
    holes: Tensor                   # (len(hole_indices), dim)
    hole_indices: tuple[int, ...]   # graph entry indices of the encoded holes
    table: ScopeTable


def legality_mask(cutoffs: Sequence[int], num_lemmas: int) -> np.ndarray:
    """``mask[h, l]`` is True when lemma ordinal ``l`` precedes hole ``h``'s cutoff."""
    return np.arange(num_lemmas)[None, :] < np.asarray(cutoffs)[:, None]


def score_pairs(holes: Tensor, lemmas: Tensor, weight: Tensor,
                cutoffs: Sequence[int] | None = None) -> Tensor | list[np.ndarray]:
    """Weighted dot products ``f(h, l) = sum_k w_k h_k l_k`` for all pairs.

    With ``cutoffs`` the result is a list of per-hole score vectors over the
    legal candidates only (plain arrays, no gradient); without, the full
    differentiable (holes, lemmas) matrix.
    """
    scores = (holes * weight) @ ops.swapaxes(lemmas, 0, 1)
    if cutoffs is None:
        return scores
    return [scores.data[i, :c].copy() for i, c in enumerate(cutoffs)]


class PremiseModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dt, e, d = cfg.dtype, cfg.emb_dim, cfg.dim
        self.static = Parameter("embed.static", (rng.standard_normal((len(STATIC_KINDS), e))
                                                 / math.sqrt(e)).astype(dt))
        self.variable = Parameter("embed.variable", (rng.standard_normal(e) / math.sqrt(e)).astype(dt))
        self.reference = Parameter("embed.reference", (rng.standard_normal((d, e))
                                                       / math.sqrt(d)).astype(dt))
        self.positions = OrthogonalPrimitives(cfg.qk_dim, rng, dt, prefix="positions")
        self.encoder = EncoderStack(cfg, rng)
        self.scorer = Parameter("scorer.weight", np.full(d, SCORER_INIT / math.sqrt(d), dtype=dt))

    @property
    def use_tree_pe(self) -> bool:
        return "no-tree-pe" not in self.cfg.ablations

    @property
    def use_var_res(self) -> bool:
        return "no-var-res" not in self.cfg.ablations

    def parameters(self) -> list[Parameter]:
        return ([self.static, self.variable, self.reference]
                + self.positions.parameters()
                + self.encoder.parameters()
                + [self.scorer])

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    # -- embeddings ---------------------------------------------------------

    def positional_cache(self, graph: FileGraph, entries: Sequence[int]) -> PositionalCache | None:
        if not (self.use_tree_pe or self.use_var_res):
            return None
        positions = set()
        for i in entries:
            positions.update(graph.entries[i].tree.position)
        left, right = self.positions.matrices()
        return build_positional_cache(positions, left, right)

    def embed_nodes(self, trees, table: ScopeTable, cache: PositionalCache | None,
                    train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Input embeddings (N, emb_dim) for the concatenated nodes of ``trees``."""
        kinds = np.concatenate([t.kind for t in trees])
        refs = np.concatenate([t.ref for t in trees])
        n = len(kinds)
        dt = self.static.dtype

        is_ref = kinds == NodeKind.REF
        if np.any(is_ref):
            missing = [int(r) for r in refs[is_ref] if int(r) not in table]
            if missing:
                # absent referents are unavailable, exactly like out-of-scope names
                kinds = kinds.copy()
                for i in np.nonzero(is_ref)[0]:
                    if int(refs[i]) not in table:
                        kinds[i] = NodeKind.OOS
            if train and self.cfg.ref_dropout > 0:
                drop = is_ref & (rng.random(n) < self.cfg.ref_dropout)
                kinds = np.where(drop, NodeKind.OOS, kinds)
            is_ref = kinds == NodeKind.REF
        is_var = kinds == NodeKind.VAR
        is_static = ~(is_ref | is_var)

        parts, order = [], []
        if np.any(is_static):
            parts.append(ops.take(self.static, kinds[is_static]))
            order.append(np.nonzero(is_static)[0])
        if np.any(is_var):
            idx = np.nonzero(is_var)[0]
            if self.use_var_res:
                if cache is None:
                    raise MissingPosition("variable resolution needs a positional cache")
                positions, binder_positions = [], []
                offset = 0
                for t in trees:
                    local = np.nonzero(t.kind == NodeKind.VAR)[0]
                    positions.extend(t.position[j] for j in local)
                    binder_positions.extend(t.position[t.ref[j]] for j in local)
                    offset += len(t)
                try:
                    r_var = cache.lookup(positions)
                    r_binder = cache.lookup(binder_positions)
                except KeyError as e:
                    raise MissingPosition(str(e)) from None
                rel = ops.cast(ops.swapaxes(r_binder, -1, -2) @ r_var, dt)
                vec = ops.reshape(self.variable, (self.cfg.emb_dim, 1))
                parts.append(ops.reshape(rel @ vec, (len(idx), self.cfg.emb_dim)))
            else:
                parts.append(ops.take(ops.reshape(self.variable, (1, -1)), np.zeros(len(idx), int)))
            order.append(idx)
        if np.any(is_ref):
            idx = np.nonzero(is_ref)[0]
            parts.append(table.lookup([int(r) for r in refs[idx]]) @ self.reference)
            order.append(idx)

        perm = np.empty(n, dtype=np.int64)
        perm[np.concatenate(order)] = np.arange(n)
        return ops.take(ops.concat(parts), perm)

    # -- encoding -----------------------------------------------------------

    def encode_file(self, graph: FileGraph, train: bool = False,
                    rng: np.random.Generator | None = None,
                    holes: Sequence[int] | None = None) -> EncodedFile:
        """Encode all lemmas and the selected holes (all by default), level by level."""
        hole_indices = tuple(graph.hole_indices if holes is None else holes)
        selected = set(range(graph.num_lemmas)) | set(hole_indices)
        cache = self.positional_cache(graph, sorted(selected))
        table = ScopeTable()
        hole_rows: dict[int, Tensor] = {}
        hole_blocks = []
        for level, members in enumerate(graph.levels):
            members = [i for i in members if i in selected]
            if not members:
                continue
            trees = [graph.entries[i].tree for i in members]
            emb = self.embed_nodes(trees, table, cache, train, rng)
            batch = TreeBatch.from_sizes([len(t) for t in trees])
            rot = None
            if self.use_tree_pe:
                rot = ops.cast(cache.lookup([p for t in trees for p in t.position]),
                               self.static.dtype)
            out = self.encoder.forward(emb, batch, rot, train, rng)
            summaries = ops.take(out, batch.roots)
            lemma_pos = [k for k, i in enumerate(members) if not graph.entries[i].is_hole]
            hole_pos = [k for k, i in enumerate(members) if graph.entries[i].is_hole]
            if lemma_pos:
                block = summaries if len(lemma_pos) == len(members) else ops.take(summaries, lemma_pos)
                table.write([members[k] for k in lemma_pos], block, level)
            if hole_pos:
                block = ops.take(summaries, hole_pos)
                hole_blocks.append(block)
                for j, k in enumerate(hole_pos):
                    hole_rows[members[k]] = (len(hole_blocks) - 1, j)
        lemmas = table.lookup(range(graph.num_lemmas)) if graph.num_lemmas else None
        if hole_indices:
            stacked = ops.concat(hole_blocks) if len(hole_blocks) > 1 else hole_blocks[0]
            offsets = np.cumsum([0] + [b.shape[0] for b in hole_blocks])
            rows = [offsets[b] + j for b, j in (hole_rows[i] for i in hole_indices)]
            hole_tensor = ops.take(stacked, rows)
        else:
            hole_tensor = Tensor(np.zeros((0, self.cfg.dim), dtype=self.static.dtype))
        return EncodedFile(lemmas, hole_tensor, hole_indices, table)

    def score(self, encoded: EncodedFile) -> Tensor:
        """Differentiable (holes, lemmas) score matrix; mask with :func:`legality_mask`."""
        return score_pairs(encoded.holes, encoded.lemmas, self.scorer)

    def legal_scores(self, graph: FileGraph, encoded: EncodedFile) -> list[np.ndarray]:
        cutoffs = [graph.entries[i].cutoff for i in encoded.hole_indices]
        return score_pairs(encoded.holes, encoded.lemmas, self.scorer, cutoffs)
