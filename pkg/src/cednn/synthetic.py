"""Synthetic face-like image pairs for demos and desk-scale experiments.

Each sample is a smooth "face" on a gradient background; pseudo action
units are localized brightness patches inside the face region, and the
label vector records which patches are present.  Landmarks follow the
standard dense annotation layout so the full attention pipeline runs
unmodified.
"""
from __future__ import annotations

import os

import numpy as np

from .attention import FIVE_POINT_TEMPLATE_224
from .datasets import build_sample
from .io_utils import DatasetManifest, ManifestRecord, save_image, \
    save_landmarks, save_manifest

# Patch centers on the 224 frame, all inside the face mask polygon.
PATCH_CENTERS_224 = ((75, 120), (150, 120), (112, 185), (112, 95))
PATCH_HALF_224 = 10
PATCH_BRIGHTNESS = 60


def canonical_dense_landmarks(size: int = 224) -> np.ndarray:
    """A 68-point dense annotation layout on a size x size frame."""
    pts = np.zeros((68, 2))
    cx, cy = 112.0, 100.0
    # jawline 0-16
    ang = np.linspace(np.pi - 0.2, 2 * np.pi + 0.2, 17)
    pts[0:17, 0] = cx + 85 * np.cos(ang)
    pts[0:17, 1] = cy - 100 * np.sin(ang)
    # brows 17-21 (left) and 22-26 (right), slight arc
    bx = np.linspace(52, 97, 5)
    pts[17:22, 0] = bx
    pts[17:22, 1] = 70 - 4 * np.sin(np.linspace(0, np.pi, 5))
    pts[22:27, 0] = np.linspace(127, 172, 5)
    pts[22:27, 1] = pts[17:22, 1][::-1]
    # nose bridge 27-30 and base 31-35
    pts[27:31, 0] = cx
    pts[27:31, 1] = np.linspace(85, 115, 4)
    pts[31:36, 0] = np.linspace(96, 128, 5)
    pts[31:36, 1] = 125
    # eyes 36-41 (left) and 42-47 (right)
    ea = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    for base, ecx in ((36, 78.0), (42, 146.0)):
        pts[base:base + 6, 0] = ecx + 12 * np.cos(ea)
        pts[base:base + 6, 1] = 85 - 6 * np.sin(ea)
    # mouth: outer 48-59, inner 60-67
    oa = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60, 0] = cx + 28 * np.cos(oa)
    pts[48:60, 1] = 157 - 12 * np.sin(oa)
    ia = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[60:68, 0] = cx + 18 * np.cos(ia)
    pts[60:68, 1] = 157 - 6 * np.sin(ia)
    return pts * (size / 224.0)


def neutral_face_image(size: int = 224, seed: int = 0) -> np.ndarray:
    """Gradient background with a brighter face ellipse; mildly randomized."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / size
    base = 40 + 60 * xs + 30 * ys + rng.uniform(-10, 10)
    cx, cy = 0.5, 0.48
    face = ((xs - cx) / 0.38) ** 2 + ((ys - cy) / 0.46) ** 2 <= 1.0
    img = np.stack([base + 60 * face + shift for shift in (10, 0, -10)], axis=-1)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def action_face_image(neutral: np.ndarray, labels, size: int = 224) -> np.ndarray:
    """Neutral frame plus one brightness patch per active pseudo-AU."""
    img = neutral.astype(np.int32).copy()
    half = max(1, round(PATCH_HALF_224 * size / 224))
    for k, active in enumerate(labels):
        if not active:
            continue
        px, py = (round(v * size / 224) for v in PATCH_CENTERS_224[k])
        img[py - half:py + half, px - half:px + half] += PATCH_BRIGHTNESS
    return np.clip(img, 0, 255).astype(np.uint8)


def synthetic_pair(labels, size: int = 224, seed: int = 0, jitter: float = 0.0):
    """(action, neutral, lm5_action, lm5_neutral, lm_dense) for one sample.

    jitter > 0 shifts the action frame (and its landmarks) by a random
    translation of that many pixels, exercising the alignment step.
    """
    neutral = neutral_face_image(size, seed)
    action = action_face_image(neutral, labels, size)
    lm5 = FIVE_POINT_TEMPLATE_224 * (size / 224.0)
    lm_dense = canonical_dense_landmarks(size)
    lm5_action = lm5.copy()
    if jitter > 0:
        rng = np.random.default_rng(seed + 1)
        shift = rng.uniform(-jitter, jitter, size=2)
        action = np.roll(action, (round(shift[1]), round(shift[0])), axis=(0, 1))
        lm5_action = lm5 + [round(shift[0]), round(shift[1])]
        lm_dense = lm_dense + [round(shift[0]), round(shift[1])]
    return action, neutral, lm5_action, lm5, lm_dense


def random_labels(n: int, d: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=(n, d))
    # guarantee every AU occurs at least once positive and once negative
    for j in range(d):
        labels[j % n, j] = 1
        labels[(j + 1) % n, j] = 0
    return labels


def make_samples(n: int = 64, size: int = 224, d: int = 4, seed: int = 0,
                 jitter: float = 0.0, n_subjects: int = 8) -> list:
    """In-memory synthetic dataset ready for train/evaluate."""
    labels = random_labels(n, d, seed)
    samples = []
    for i in range(n):
        action, neutral, lm5a, lm5n, dense = synthetic_pair(
            labels[i], size=size, seed=seed * 10_000 + i, jitter=jitter)
        samples.append(build_sample(f"S{i % n_subjects:02d}", action, neutral,
                                    lm5a, lm5n, dense, labels[i], size=size))
    return samples


def write_dataset(root, n: int = 16, size: int = 224, d: int = 4,
                  seed: int = 0, jitter: float = 0.0,
                  n_subjects: int = 4) -> str:
    """Write PNGs, landmark files and a manifest under root; returns the
    manifest path."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "landmarks"), exist_ok=True)
    labels = random_labels(n, d, seed)
    records = []
    for i in range(n):
        action, neutral, lm5a, lm5n, dense = synthetic_pair(
            labels[i], size=size, seed=seed * 10_000 + i, jitter=jitter)
        paths = {
            "image": f"images/{i:04d}_action.png",
            "neutral": f"images/{i:04d}_neutral.png",
            "landmarks5": f"landmarks/{i:04d}_lm5.txt",
            "landmarks5_neutral": f"landmarks/{i:04d}_lm5n.txt",
            "landmarks_dense": f"landmarks/{i:04d}_dense.txt",
        }
        save_image(action, os.path.join(root, paths["image"]))
        save_image(neutral, os.path.join(root, paths["neutral"]))
        save_landmarks(lm5a, os.path.join(root, paths["landmarks5"]))
        save_landmarks(lm5n, os.path.join(root, paths["landmarks5_neutral"]))
        save_landmarks(dense, os.path.join(root, paths["landmarks_dense"]))
        records.append(ManifestRecord(
            subject=f"S{i % n_subjects:02d}", fold=i % n_subjects % 3 + 1,
            labels=labels[i], **paths))
    manifest = DatasetManifest(root, records)
    path = os.path.join(root, "manifest.csv")
    save_manifest(manifest, path)
    return path
