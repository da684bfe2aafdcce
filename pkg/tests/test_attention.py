import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from premsel.attention import (
    DegenerateDenominator, EncoderLayer, EncoderStack, OrthogonalPrimitives, TreeBatch,
    ablation_variants, build_positional_cache, elu_feature_map, feature_dim, linear_attention,
    position_matrix, skew_expm, taylor_feature_map,
)
from premsel.config import ModelConfig, UnknownMode
from premsel.numerics import Parameter, Tensor, backward, ops
from premsel.selfcheck import random_orthogonal


def kernel_oracle(q, k, v, rot=None):
    """Quadratic attention written directly in terms of the kernel 1 + s + s^2/2."""
    if rot is not None:
        q = np.einsum("nij,nhj->nhi", rot, q)
        k = np.einsum("nij,nhj->nhi", rot, k)
    s = np.einsum("ihd,jhd->hij", q, k)
    w = 1 + s + 0.5 * s * s
    return np.einsum("hij,jhe->ihe", w, v) / w.sum(-1).T[:, :, None]


def test_feature_map_identity():
    rng = np.random.default_rng(0)
    q, k = rng.standard_normal((2, 500, 16))
    dot = np.einsum("nd,nd->n", taylor_feature_map(Tensor(q)).data, taylor_feature_map(Tensor(k)).data)
    s = np.einsum("nd,nd->n", q, k)
    np.testing.assert_allclose(dot, 1 + s + 0.5 * s * s, rtol=1e-12)
    assert taylor_feature_map(Tensor(q)).shape[-1] == feature_dim(16) == 273
    assert feature_dim(16, taylor=False) == 16


def test_single_node_returns_its_value():
    rng = np.random.default_rng(1)
    q, k, v = rng.standard_normal((1, 2, 4)), rng.standard_normal((1, 2, 4)), rng.standard_normal((1, 2, 3))
    out = linear_attention(Tensor(q), Tensor(k), Tensor(v), TreeBatch.from_sizes([1]))
    np.testing.assert_allclose(out.data, v, rtol=1e-12)


@given(st.lists(st.integers(1, 12), min_size=1, max_size=5), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_matches_quadratic_oracle(sizes, seed):
    rng = np.random.default_rng(seed)
    n, h, d, e = sum(sizes), 2, 4, 3
    q, k = rng.standard_normal((2, n, h, d)) * 0.5
    v = rng.standard_normal((n, h, e))
    rot = random_orthogonal(rng, n, d)
    batch = TreeBatch.from_sizes(sizes)
    out = linear_attention(Tensor(q), Tensor(k), Tensor(v), batch, Tensor(rot)).data
    for start, size in zip(batch.roots, sizes):
        sl = slice(start, start + size)
        np.testing.assert_allclose(out[sl], kernel_oracle(q[sl], k[sl], v[sl], rot[sl]),
                                   rtol=1e-9, atol=1e-12)


def test_trees_do_not_interact():
    rng = np.random.default_rng(2)
    q, k, v = rng.standard_normal((5, 1, 3)), rng.standard_normal((5, 1, 3)), rng.standard_normal((5, 1, 2))
    both = linear_attention(Tensor(q), Tensor(k), Tensor(v), TreeBatch.from_sizes([2, 3])).data
    alone = linear_attention(Tensor(q[2:]), Tensor(k[2:]), Tensor(v[2:]), TreeBatch.from_sizes([3])).data
    np.testing.assert_allclose(both[2:], alone, rtol=1e-12)


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    n = 7
    q, k = rng.standard_normal((2, n, 2, 4))
    v = rng.standard_normal((n, 2, 5))
    batch = TreeBatch.from_sizes([n])
    out = linear_attention(Tensor(q), Tensor(k), Tensor(v), batch).data
    perm = rng.permutation(n)
    out_p = linear_attention(Tensor(q[perm]), Tensor(k[perm]), Tensor(v[perm]), batch).data
    np.testing.assert_allclose(out_p, out[perm], rtol=1e-10)


def test_degenerate_denominator_detected():
    # 1 + s + s^2/2 >= 1/2 always, so only a broken feature map gets here
    q = Tensor(np.zeros((2, 1, 2)))
    v = Tensor(np.ones((2, 1, 1)))
    zero_map = lambda x: ops.scale(x, 0.0)
    with pytest.raises(DegenerateDenominator):
        linear_attention(q, q, v, TreeBatch.from_sizes([2]), feature_map=zero_map)


def test_skew_expm_is_orthogonal_and_differentiable():
    rng = np.random.default_rng(4)
    for scale in (0.01, 1.0, 10.0):
        a = Parameter("a", rng.standard_normal((6, 6)) * scale, dtype=np.float64)
        r = skew_expm(a).data
        assert np.abs(r.T @ r - np.eye(6)).max() < 1e-12
        assert np.linalg.det(r) == pytest.approx(1.0)
    import scipy.linalg
    a = rng.standard_normal((5, 5))
    np.testing.assert_allclose(skew_expm(Tensor(a)).data, scipy.linalg.expm(a - a.T), atol=1e-12)


def test_positional_cache_matches_paths():
    prim = OrthogonalPrimitives(4, np.random.default_rng(5), dtype="float64")
    left, right = prim.matrices()
    cache = build_positional_cache([1, 5, 6, 13], left, right)
    assert set(cache.rows) == {1, 2, 3, 5, 6, 13}
    for pos, path in [(1, ""), (5, "LR"), (6, "RL"), (13, "RLR")]:
        np.testing.assert_allclose(cache.lookup([pos]).data[0], position_matrix(path, left, right).data,
                                   atol=1e-13)
    with pytest.raises(KeyError):
        cache.lookup([7])
    with pytest.raises(ValueError):
        position_matrix("LX", left, right)


def test_scores_depend_on_relative_path_only():
    prim = OrthogonalPrimitives(4, np.random.default_rng(6), dtype="float64")
    left, right = prim.matrices()
    rng = np.random.default_rng(7)
    q, k = rng.standard_normal((2, 4))
    r = lambda path: position_matrix(path, left, right).data
    base = (r("L") @ q) @ (r("LR") @ k)
    for prefix in ("R", "LL", "RLR"):
        shifted = (r(prefix + "L") @ q) @ (r(prefix + "LR") @ k)
        assert shifted == pytest.approx(base, rel=1e-10)


def _cfg(**kw):
    base = dict(dim=8, layers=2, heads=2, qk_dim=4, v_dim=3, ffn_dim=12, dropout=0.0,
                ref_dropout=0.0, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def test_zero_output_projections_make_layer_identity():
    layer = EncoderLayer(_cfg(), np.random.default_rng(8))
    layer.wo.data[...] = 0
    layer.w_down.data[...] = 0
    x = np.random.default_rng(9).standard_normal((5, 8))
    out = layer.forward(Tensor(x), TreeBatch.from_sizes([2, 3]))
    np.testing.assert_array_equal(out.data, x)


def test_stack_shapes_and_gradients_reach_every_parameter():
    cfg = _cfg()
    stack = EncoderStack(cfg, np.random.default_rng(10))
    emb = Tensor(np.random.default_rng(11).standard_normal((6, cfg.emb_dim)))
    rot = Tensor(random_orthogonal(np.random.default_rng(12), 6, cfg.qk_dim))
    out = stack.forward(emb, TreeBatch.from_sizes([4, 2]), rot)
    assert out.shape == (6, 8)
    backward(ops.sum(out * out))
    assert all(np.abs(p.grad).sum() > 0 for p in stack.parameters())


def test_dropout_only_in_training():
    cfg = _cfg(dropout=0.5)
    stack = EncoderStack(cfg, np.random.default_rng(13))
    emb = Tensor(np.random.default_rng(14).standard_normal((3, cfg.emb_dim)))
    batch = TreeBatch.from_sizes([3])
    a = stack.forward(emb, batch).data
    b = stack.forward(emb, batch).data
    c = stack.forward(emb, batch, train=True, rng=np.random.default_rng(0)).data
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_ablation_variants():
    assert ablation_variants([])["feature_map"] is taylor_feature_map
    v = ablation_variants(["no-taylor", "no-tree-pe"])
    assert v["feature_map"] is elu_feature_map and v["sinusoids"] and v["variable_resolution"]
    with pytest.raises(UnknownMode):
        ablation_variants(["no-attention"])
    with pytest.raises(UnknownMode):
        _cfg(ablations=("bogus",))


def test_sinusoidal_ablation_ignores_rotations():
    cfg = _cfg(ablations=("no-tree-pe",))
    stack = EncoderStack(cfg, np.random.default_rng(15))
    emb = Tensor(np.random.default_rng(16).standard_normal((4, cfg.emb_dim)))
    batch = TreeBatch.from_sizes([4])
    rot = Tensor(random_orthogonal(np.random.default_rng(17), 4, cfg.qk_dim))
    np.testing.assert_array_equal(stack.forward(emb, batch, rot).data, stack.forward(emb, batch).data)


def test_tree_batch_layout():
    b = TreeBatch.from_sizes([2, 3])
    assert b.shape == (2, 3) and b.num_nodes == 5
    assert list(b.roots) == [0, 2]
    assert b.mask.tolist() == [[True, True, False], [True, True, True]]
    with pytest.raises(ValueError):
        TreeBatch.from_sizes([2, 0])
