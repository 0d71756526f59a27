"""Walk through the difference-attention pipeline on a synthetic face pair.

Generates an expressive/neutral frame pair, then shows each stage: five-point
alignment, absolute difference with luminance conversion, face-polygon
masking, five-threshold binarization and the max-pooled pyramid. Stage
images land in demos/out/attention/.
"""
import os

import numpy as np

from cednn.attention import (FIVE_POINT_TEMPLATE_224, THRESHOLDS, apply_mask,
                             binarize, build_face_mask, difference_image,
                             estimate_similarity_transform,
                             generate_attention_stack, transform_points,
                             warp_image)
from cednn.io_utils import save_image
from cednn.synthetic import synthetic_pair

OUT = os.path.join(os.path.dirname(__file__), "out", "attention")
os.makedirs(OUT, exist_ok=True)

action, neutral, lm5_action, lm5_neutral, lm_dense = synthetic_pair(
    labels=[1, 0, 1, 0], size=224, seed=42, jitter=4.0)
save_image(action, os.path.join(OUT, "0_action_raw.png"))
save_image(neutral, os.path.join(OUT, "0_neutral_raw.png"))

# 1. similarity alignment onto the canonical five-point layout
t_action = estimate_similarity_transform(lm5_action, FIVE_POINT_TEMPLATE_224)
t_neutral = estimate_similarity_transform(lm5_neutral, FIVE_POINT_TEMPLATE_224)
aligned_action = warp_image(action, t_action, 224)
aligned_neutral = warp_image(neutral, t_neutral, 224)
save_image(aligned_action, os.path.join(OUT, "1_action_aligned.png"))
print("alignment residual (px):",
      np.abs(transform_points(t_action, lm5_action)
             - FIVE_POINT_TEMPLATE_224).max().round(3))

# 2. absolute difference, converted to luminance
diff = difference_image(aligned_action, aligned_neutral)
save_image(diff, os.path.join(OUT, "2_difference.png"))
print("difference image: nonzero pixels =", int((diff > 0).sum()))

# 3. face-region mask from the dense landmarks
mask = build_face_mask(transform_points(t_action, lm_dense), 224)
masked = apply_mask(diff, mask)
save_image(mask, os.path.join(OUT, "3_face_mask.png"))
save_image(masked, os.path.join(OUT, "3_difference_masked.png"))

# 4. one binary map per threshold; higher thresholds keep fewer pixels
for thr in THRESHOLDS:
    bin_map = binarize(masked, thr)
    save_image(bin_map, os.path.join(OUT, f"4_threshold_{thr}.png"))
    print(f"threshold {thr}: {int((bin_map > 0).sum())} active pixels")

# 5. the pooled pyramid used inside the network
stack = generate_attention_stack(action, neutral, lm5_action, lm5_neutral,
                                 lm_dense)
print("pyramid levels:", stack.sizes)
for size in stack.sizes:
    level = stack.level(size)
    save_image(level[0] * 255, os.path.join(OUT, f"5_pyramid_t30_{size}.png"))
    print(f"  {size}x{size}: active fraction per threshold "
          f"{[round(float(m.mean()), 3) for m in level]}")
print("stage images written to", OUT)
