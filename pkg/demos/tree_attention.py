"""Orthogonal tree positions and linearized attention, checked by hand.

Run from the repository root:  python3 demos/tree_attention.py
"""

import numpy as np

from premsel.attention import (
    OrthogonalPrimitives, TreeBatch, build_positional_cache, linear_attention, position_matrix,
    taylor_feature_map,
)
from premsel.numerics import Tensor

rng = np.random.default_rng(0)

# the feature map turns exp-like similarity into a plain dot product
q, k = rng.standard_normal((2, 16))
s = q @ k
lhs = taylor_feature_map(Tensor(q)).data @ taylor_feature_map(Tensor(k)).data
print(f"phi(q).phi(k) = {lhs:.6f}   1 + s + s^2/2 = {1 + s + s * s / 2:.6f}")

# two learned primitives, one per branch direction
prim = OrthogonalPrimitives(4, rng, dtype="float64")
left, right = prim.matrices()
print("B_L orthogonal:", np.allclose(left.data.T @ left.data, np.eye(4)))

# position 13 = binary 1101 = root, right, left, right
cache = build_positional_cache([13], left, right)
print("cached positions:", sorted(cache.rows))
print("R_13 == B_R B_L B_R:",
      np.allclose(cache.lookup([13]).data[0], position_matrix("RLR", left, right).data))

# rotated dot products only see the path between two nodes
r = lambda path: position_matrix(path, left, right).data
for prefix in ("", "R", "LL"):
    print(f"prefix {prefix!r:5}: {(r(prefix + 'L') @ q[:4]) @ (r(prefix + 'LR') @ k[:4]):+.6f}")

# linear attention over two trees at once, against a quadratic loop
sizes = [3, 5]
n, h, d, e = sum(sizes), 2, 4, 3
Q, K = rng.standard_normal((2, n, h, d))
V = rng.standard_normal((n, h, e))
rot = np.stack([r(p) for p in ["", "L", "R", "", "L", "LL", "LR", "R"]])
fast = linear_attention(Tensor(Q), Tensor(K), Tensor(V), TreeBatch.from_sizes(sizes), Tensor(rot)).data

slow = np.zeros_like(fast)
for lo, hi in [(0, 3), (3, 8)]:
    for i in range(lo, hi):
        for head in range(h):
            w = np.array([1 + x + x * x / 2 for x in
                          [(rot[i] @ Q[i, head]) @ (rot[j] @ K[j, head]) for j in range(lo, hi)]])
            slow[i, head] = w @ V[lo:hi, head] / w.sum()
print("max |linear - quadratic| =", np.abs(fast - slow).max())
