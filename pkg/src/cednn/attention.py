"""Difference-image spatial attention maps.

Pipeline: align both frames to a canonical five-point template, take the
per-channel absolute difference, convert to grayscale, mask everything
outside the face polygon, binarize at five thresholds, and build a
max-pooled pyramid so the maps can be injected at every block scale.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, mul

THRESHOLDS = (30, 35, 40, 45, 50)

# Canonical five-point layout (both eyes, nose tip, mouth corners) on the
# 224x224 output frame; a common frontal face crop convention.
FIVE_POINT_TEMPLATE_224 = np.array([
    [78.0, 85.0],
    [146.0, 85.0],
    [112.0, 124.0],
    [84.0, 157.0],
    [140.0, 157.0],
])

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

CONTOUR_IDX = range(0, 17)       # jawline in the dense annotation
BROW_IDX = range(17, 27)         # left brow 17-21, right brow 22-26
NOSE_BRIDGE_TOP = 27
INWARD_OFFSET = 5.0
BROW_LIFT = 5.0


# ---------------------------------------------------------------------------
# alignment

def estimate_similarity_transform(src: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Least-squares rotation + uniform scale + translation mapping src points
    onto the template.  Returns a 2x3 matrix acting on column [x, y, 1]."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(template, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("point sets must both be (k, 2)")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    sc, dc = src - mu_s, dst - mu_d
    var_s = (sc ** 2).sum() / len(src)
    if var_s == 0:
        raise ValueError("degenerate source point set (zero variance)")
    cov = dc.T @ sc / len(src)
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[-1] = -1
    rot = u @ np.diag(d) @ vt
    scale = (s * d).sum() / var_s
    t = mu_d - scale * rot @ mu_s
    m = np.empty((2, 3))
    m[:, :2] = scale * rot
    m[:, 2] = t
    return m


def transform_points(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ transform[:, :2].T + transform[:, 2]


def warp_image(img: np.ndarray, transform: np.ndarray, out_size: int = 224) -> np.ndarray:
    """Warp with bilinear sampling; out-of-bounds source pixels read as 0."""
    img = np.asarray(img)
    gray = img.ndim == 2
    src = img[..., None].astype(np.float64) if gray else img.astype(np.float64)
    h, w = src.shape[:2]

    full = np.vstack([transform, [0.0, 0.0, 1.0]])
    inv = np.linalg.inv(full)
    ys, xs = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0

    def gather(yy, xx):
        valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        out = np.zeros(xx.shape + (src.shape[2],))
        out[valid] = src[yy[valid], xx[valid]]
        return out

    v00 = gather(y0, x0)
    v01 = gather(y0, x0 + 1)
    v10 = gather(y0 + 1, x0)
    v11 = gather(y0 + 1, x0 + 1)
    fx, fy = fx[..., None], fy[..., None]
    out = (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
           + v10 * (1 - fx) * fy + v11 * fx * fy)
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out[..., 0] if gray else out


# ---------------------------------------------------------------------------
# difference + mask

def difference_image(action: np.ndarray, neutral: np.ndarray) -> np.ndarray:
    """Per-channel absolute difference, then luminance conversion."""
    a = np.asarray(action)
    n = np.asarray(neutral)
    if a.shape != n.shape:
        raise ValueError(f"size mismatch {a.shape} vs {n.shape}")
    diff = np.abs(a.astype(np.int32) - n.astype(np.int32))
    if diff.ndim == 3:
        r, g, b = LUMA_WEIGHTS
        diff = r * diff[..., 0] + g * diff[..., 1] + b * diff[..., 2]
    return np.clip(np.rint(diff), 0, 255).astype(np.uint8)


def _mask_polygon(landmarks: np.ndarray) -> np.ndarray:
    """Face-region polygon vertices from a dense landmark set.

    Jawline points move toward the landmark centroid, brow points move up,
    and the glabella gap between the brows is bridged by a substitute vertex
    above the nose bridge (keeps the brow-squeeze region inside the mask).
    """
    pts = np.asarray(landmarks, dtype=np.float64)
    if len(pts) <= NOSE_BRIDGE_TOP:
        raise ValueError("dense landmark set with contour, brows and nose bridge required")
    centroid = pts.mean(axis=0)

    verts = []
    for i in CONTOUR_IDX:
        d = centroid - pts[i]
        norm = np.hypot(*d)
        verts.append(pts[i] + INWARD_OFFSET * d / norm if norm > 0 else pts[i])
    # right brow outer-to-inner, substitute glabella vertex, left brow inner-to-outer
    for i in range(26, 21, -1):
        verts.append(pts[i] + [0.0, -BROW_LIFT])
    glabella = np.array([pts[NOSE_BRIDGE_TOP][0],
                         min(pts[21][1], pts[22][1]) - BROW_LIFT])
    verts.append(glabella)
    for i in range(21, 16, -1):
        verts.append(pts[i] + [0.0, -BROW_LIFT])
    return np.array(verts)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1, d2 = cross(p3, p4, p1), cross(p3, p4, p2)
    d3, d4 = cross(p1, p2, p3), cross(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def fill_polygon(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scanline rasterization with the non-zero winding rule.

    Pixels are tested at their centers; returns {0, 255} uint8.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    mask = np.zeros((height, width), dtype=np.uint8)
    n = len(verts)
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for row in range(height):
        y = row + 0.5
        crossings = []
        for (x1, y1), (x2, y2) in edges:
            if y1 == y2:
                continue
            if (y1 <= y < y2) or (y2 <= y < y1):
                t = (y - y1) / (y2 - y1)
                crossings.append((x1 + t * (x2 - x1), 1 if y2 > y1 else -1))
        if not crossings:
            continue
        crossings.sort()
        winding = 0
        span_start = None
        for x, direction in crossings:
            prev = winding
            winding += direction
            if prev == 0 and winding != 0:
                span_start = x
            elif prev != 0 and winding == 0 and span_start is not None:
                lo = max(0, int(np.ceil(span_start - 0.5)))
                hi = min(width, int(np.floor(x - 0.5)) + 1)
                if hi > lo:
                    mask[row, lo:hi] = 255
                span_start = None
    return mask


def build_face_mask(landmarks: np.ndarray, image_size: int) -> np.ndarray:
    """Filled face polygon (interior 255, exterior 0) from dense landmarks."""
    verts = _mask_polygon(landmarks)
    n = len(verts)
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            c, d = verts[j], verts[(j + 1) % n]
            if _segments_intersect(a, b, c, d):
                warnings.warn("face mask polygon self-intersects after offsets; "
                              "filling with the winding rule")
                return fill_polygon(verts, image_size, image_size)
    return fill_polygon(verts, image_size, image_size)


def apply_mask(diff: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if diff.shape != mask.shape:
        raise ValueError(f"size mismatch {diff.shape} vs {mask.shape}")
    return np.where(mask == 255, diff, 0).astype(np.uint8)


def binarize(diff: np.ndarray, threshold: int) -> np.ndarray:
    """Pixels >= threshold become 255, everything else 0."""
    return np.where(diff >= threshold, 255, 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# the stack

def _maxpool2_map(m: np.ndarray) -> np.ndarray:
    h, w = m.shape
    return m.reshape(h // 2, 2, w // 2, 2).max(axis=(1, 3))


def pyramid_sizes(top: int) -> list[int]:
    sizes = [top]
    while sizes[-1] > 7:
        sizes.append(sizes[-1] // 2)
    return sizes


@dataclass
class AttentionStack:
    """Five {0,1} maps at increasing thresholds plus their pooled pyramid."""
    thresholds: tuple
    maps: np.ndarray                 # (5, S, S) uint8 in {0, 1}
    pyramid: dict                    # size -> (5, size, size) uint8 in {0, 1}

    @classmethod
    def from_maps(cls, maps: np.ndarray, thresholds=THRESHOLDS) -> "AttentionStack":
        maps = np.asarray(maps, dtype=np.uint8)
        pyramid = {maps.shape[-1]: maps}
        level = maps
        while level.shape[-1] > 7:
            level = np.stack([_maxpool2_map(m) for m in level])
            pyramid[level.shape[-1]] = level
        return cls(tuple(thresholds), maps, pyramid)

    def level(self, size: int) -> np.ndarray:
        if size not in self.pyramid:
            raise ValueError(f"no pyramid level of size {size}; have {sorted(self.pyramid)}")
        return self.pyramid[size]

    @property
    def sizes(self) -> list[int]:
        return sorted(self.pyramid, reverse=True)


def generate_attention_stack(action: np.ndarray, neutral: np.ndarray,
                             lm5_action: np.ndarray, lm5_neutral: np.ndarray,
                             lm_dense: np.ndarray,
                             out_size: int = 224,
                             template: np.ndarray | None = None,
                             thresholds=THRESHOLDS) -> AttentionStack:
    """Full pipeline: align both frames, difference, mask, binarize at each
    threshold, normalize to {0,1} and build the pooled pyramid."""
    if template is None:
        template = FIVE_POINT_TEMPLATE_224 * (out_size / 224.0)
    t_action = estimate_similarity_transform(lm5_action, template)
    t_neutral = estimate_similarity_transform(lm5_neutral, template)
    wa = warp_image(action, t_action, out_size)
    wn = warp_image(neutral, t_neutral, out_size)
    diff = difference_image(wa, wn)
    dense_aligned = transform_points(t_action, lm_dense)
    mask = build_face_mask(dense_aligned, out_size)
    masked = apply_mask(diff, mask)
    maps = np.stack([binarize(masked, t) // 255 for t in thresholds])
    return AttentionStack.from_maps(maps, thresholds)


# ---------------------------------------------------------------------------
# feeding the network

def tile_image(img: np.ndarray) -> np.ndarray:
    """RGB image (3, S, S) in [0, 1] tiled 6x channel-wise -> (18, S, S)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("expected a (3, S, S) image")
    return np.tile(img, (6, 1, 1))


def attention_modulation(stack: AttentionStack, channels: int, size: int,
                         mode: str = "grouped", dtype=np.float32) -> np.ndarray:
    """Constant multiplier tensor (1, C, S, S) implementing (1 + A_k) per
    channel group (or a mean-map broadcast over all channels)."""
    maps = stack.level(size).astype(dtype)
    if mode == "mean":
        return (1.0 + maps.mean(axis=0))[None, None].astype(dtype)
    if mode != "grouped":
        raise ValueError(f"unknown attention mode {mode!r}")
    if channels % 6:
        raise ValueError(f"channel count {channels} not divisible by 6")
    per = channels // 6
    mod = np.ones((1, channels, size, size), dtype=dtype)
    for k in range(5):
        mod[0, k * per:(k + 1) * per] = 1.0 + maps[k]
    return mod


def compose_block_input(x: Tensor, stack, level: int,
                        mode: str = "grouped") -> Tensor:
    """Modulate the first five channel groups of x by (1 + A_k); the sixth
    group passes through untouched.

    stack may be a single AttentionStack shared by the batch or a sequence
    with one stack per sample.
    """
    x = as_tensor(x)
    if x.shape[2] != level or x.shape[3] != level:
        raise ValueError(f"feature size {x.shape[2:]} does not match level {level}")
    if isinstance(stack, AttentionStack):
        mod = attention_modulation(stack, x.shape[1], level, mode=mode, dtype=x.dtype)
    else:
        if len(stack) != x.shape[0]:
            raise ValueError(f"{len(stack)} stacks for batch of {x.shape[0]}")
        mod = np.concatenate(
            [attention_modulation(s, x.shape[1], level, mode=mode, dtype=x.dtype)
             for s in stack], axis=0)
    return mul(x, Tensor(mod))
