"""The interleaved-group-convolution block as one linear operator.

Shows the channel shuffle permutation, verifies that in linear mode a block
collapses to the closed form (fusion @ (P' W2 P W1 + skip)), and measures
how grouping shrinks the weight count of an 18-channel block.
"""
import numpy as np

from cednn import tensor as T
from cednn.model import ModelConfig, block_forward, build_model
from cednn.tensor import ShufflePlan, Tensor

# the shuffle: channel l*M + m moves to slot m*L + l
plan = ShufflePlan.create(3, 6)
print("L=3, M=6 shuffle:", plan.forward_index.tolist())
print("round trip is the identity:",
      (plan.forward_index[plan.inverse_index] == np.arange(18)).all())

# linear-mode block vs the explicitly assembled operator
c, h = 18, 4
rng = np.random.default_rng(0)
for groups in (1, 3, 18):
    config = ModelConfig(groups=groups, num_blocks=1, input_size=7,
                         attention_depth=0, linear_mode=True)
    params = build_model(config, seed=0, dtype=np.float64)
    bp, spec = params.blocks[0], config.blocks[0]

    n = c * h * h
    basis = np.eye(n).reshape(n, 1, c, h, h)
    w1 = np.stack([T.conv2d(Tensor(basis[i]), bp.conv1, groups=groups,
                            padding=1).data.ravel() for i in range(n)], axis=1)
    w2 = np.stack([T.conv2d(Tensor(basis[i]), bp.conv2,
                            groups=spec.channels_per_group).data.ravel()
                   for i in range(n)], axis=1)
    perm = np.zeros((n, n))
    for oc, ic in enumerate(bp.plan.forward_index):
        perm[oc * h * h:(oc + 1) * h * h,
             ic * h * h:(ic + 1) * h * h] = np.eye(h * h)
    w3 = np.stack([T.conv2d(Tensor(np.eye(n).reshape(n, 1, c, h, h)[i]),
                            bp.fusion).data.ravel() for i in range(n)], axis=1)
    operator = w3 @ (perm.T @ w2 @ perm @ w1 + np.eye(n))

    x = rng.standard_normal((1, c, h, h))
    block_out = block_forward(Tensor(x), bp, spec).data.ravel()
    diff = np.abs(block_out - operator @ x.ravel()).max()
    weights = bp.conv1.size + bp.conv2.size
    print(f"L={groups:2d}: two-stage weights {weights:5d} "
          f"(dense 3x3 would use {9 * c * c}), closed-form diff {diff:.2e}")

# grouped convolution locality: each output group sees only its input group
config = ModelConfig(groups=6, num_blocks=1, input_size=7,
                     attention_depth=0, linear_mode=True)
params = build_model(config, seed=1, dtype=np.float64)
x = rng.standard_normal((1, 18, 7, 7))
base = T.conv2d(Tensor(x), params.blocks[0].conv1, groups=6, padding=1).data
x2 = x.copy()
x2[:, 0:3] += 1.0
out = T.conv2d(Tensor(x2), params.blocks[0].conv1, groups=6, padding=1).data
changed = np.where(np.abs(out - base).sum(axis=(0, 2, 3)) > 0)[0]
print("perturbing input channels 0..2 changes output channels:",
      changed.tolist())
