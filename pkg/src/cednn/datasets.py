"""In-memory samples: aligned network inputs paired with attention stacks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (FIVE_POINT_TEMPLATE_224, AttentionStack,
                        estimate_similarity_transform, generate_attention_stack,
                        tile_image, warp_image)
from .io_utils import DatasetManifest, load_image, load_landmarks


@dataclass
class Sample:
    subject: str
    entry: np.ndarray                  # (18, S, S) float32 in [0, 1]
    stack: AttentionStack | None
    labels: np.ndarray                 # {0,1}^d


def build_sample(subject: str, action: np.ndarray, neutral: np.ndarray,
                 lm5_action: np.ndarray, lm5_neutral: np.ndarray,
                 lm_dense: np.ndarray, labels: np.ndarray,
                 size: int = 224, with_stack: bool = True) -> Sample:
    """Align the action frame, tile it to 18 channels and attach the
    difference-attention stack."""
    template = FIVE_POINT_TEMPLATE_224 * (size / 224.0)
    t = estimate_similarity_transform(lm5_action, template)
    aligned = warp_image(action, t, size)
    entry = tile_image(aligned.transpose(2, 0, 1).astype(np.float32) / 255.0)
    stack = None
    if with_stack:
        stack = generate_attention_stack(action, neutral, lm5_action,
                                         lm5_neutral, lm_dense, out_size=size)
    return Sample(subject, entry, stack, np.asarray(labels, dtype=np.int64))


def samples_from_manifest(manifest: DatasetManifest, size: int = 224,
                          with_stack: bool = True, indices=None) -> list:
    records = manifest.records
    if indices is not None:
        records = [records[i] for i in indices]
    samples = []
    for r in records:
        samples.append(build_sample(
            r.subject,
            load_image(manifest.path(r.image)),
            load_image(manifest.path(r.neutral)),
            load_landmarks(manifest.path(r.landmarks5)),
            load_landmarks(manifest.path(r.landmarks5_neutral)),
            load_landmarks(manifest.path(r.landmarks_dense)),
            r.labels, size=size, with_stack=with_stack))
    return samples
