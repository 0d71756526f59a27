"""File formats: dataset manifests (CSV), landmark text files, PNG images,
key/value config files and the binary checkpoint format."""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .model import ModelConfig, ModelParams, build_model
from .training import TrainOptions, binarize_intensity

CHECKPOINT_MAGIC = b"CEDNNCKP"
CHECKPOINT_VERSION = 1


class ManifestError(Exception):
    pass


class CheckpointError(Exception):
    pass


def atomic_write(path, data: bytes):
    """Whole-file-atomic write: temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# images and landmarks

def load_image(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img)


def save_image(arr: np.ndarray, path):
    arr = np.asarray(arr, dtype=np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def load_landmarks(path) -> np.ndarray:
    """Plain text, one 'index,x,y' record per line, returned ordered by index."""
    points = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 'index,x,y'")
            idx = int(parts[0])
            points[idx] = (float(parts[1]), float(parts[2]))
    if sorted(points) != list(range(len(points))):
        raise ManifestError(f"{path}: landmark indices must be 0..{len(points) - 1}")
    return np.array([points[i] for i in range(len(points))])


def save_landmarks(points: np.ndarray, path):
    lines = [f"{i},{x:.4f},{y:.4f}" for i, (x, y) in enumerate(np.asarray(points))]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# manifest

MANIFEST_COLUMNS = ("subject", "image", "neutral", "landmarks5",
                    "landmarks5_neutral", "landmarks_dense", "fold", "labels")


@dataclass
class ManifestRecord:
    subject: str
    image: str
    neutral: str
    landmarks5: str
    landmarks5_neutral: str
    landmarks_dense: str
    fold: int | None
    labels: np.ndarray       # {0,1}^d after any intensity binarization


@dataclass
class DatasetManifest:
    root: str
    records: list

    @property
    def d(self) -> int:
        return len(self.records[0].labels)

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest CSV.

    Labels are semicolon-separated integers; values above 1 are treated as
    raw AU intensities and binarized at level 2.
    """
    path = os.fspath(path)
    root = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest")
        if tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}:1: header must be {','.join(MANIFEST_COLUMNS)}")
        arity = None
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"{path}:{lineno}: expected "
                                    f"{len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            subject = row[0].strip()
            if not subject:
                raise ManifestError(f"{path}:{lineno}: empty subject id")
            raw = [v for v in row[7].split(";") if v.strip() != ""]
            if arity is None:
                arity = len(raw)
            elif len(raw) != arity:
                raise ManifestError(
                    f"{path}:{lineno}: label arity {len(raw)} != {arity}")
            try:
                values = [int(v) for v in raw]
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: non-integer label")
            if any(v < 0 or v > 5 for v in values):
                raise ManifestError(f"{path}:{lineno}: label outside 0..5")
            if any(v > 1 for v in values):
                values = [binarize_intensity(v) for v in values]
            for col in range(1, 6):
                rel = row[col].strip()
                if not os.path.exists(os.path.join(root, rel)):
                    raise ManifestError(
                        f"{path}:{lineno}: missing file {rel!r} "
                        f"(column {MANIFEST_COLUMNS[col]})")
            fold = int(row[6]) if row[6].strip() else None
            records.append(ManifestRecord(
                subject, row[1].strip(), row[2].strip(), row[3].strip(),
                row[4].strip(), row[5].strip(), fold,
                np.array(values, dtype=np.int64)))
    if not records:
        raise ManifestError(f"{path}: no records")
    return DatasetManifest(root, records)


def save_manifest(manifest: DatasetManifest, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for r in manifest.records:
        writer.writerow([
            r.subject, r.image, r.neutral, r.landmarks5, r.landmarks5_neutral,
            r.landmarks_dense, "" if r.fold is None else r.fold,
            ";".join(str(int(v)) for v in r.labels)])
    atomic_write(path, buf.getvalue().encode())


# ---------------------------------------------------------------------------
# config files

_MODEL_KEYS = {
    "connection": str, "groups": int, "d": int, "num_blocks": int,
    "input_size": int, "attention_depth": int, "attention_mode": str,
    "se_mode": str, "se_reduction": int, "reduction_channels": int,
    "top_channels": int, "linear_mode": lambda v: v.lower() in ("1", "true", "yes"),
}
_TRAIN_KEYS = {
    "epochs": int, "batch_size": int, "base_lr": float, "lr_profile": str,
    "lr_step": int, "momentum": float, "weight_decay": float, "seed": int,
    "eval_every": int, "f1_stop": float,
}


def load_config(path):
    """Parse a 'key = value' config file into (ModelConfig, TrainOptions)."""
    model_kw, train_kw = {}, {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in _MODEL_KEYS:
                model_kw[key] = _MODEL_KEYS[key](value)
            elif key in _TRAIN_KEYS:
                train_kw[key] = _TRAIN_KEYS[key](value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return ModelConfig(**model_kw), TrainOptions(**train_kw)


def save_config(config: ModelConfig, options: TrainOptions, path):
    lines = ["# model"]
    lines += [f"{k} = {v}" for k, v in config.to_dict().items()]
    lines.append("# training")
    lines += [f"{k} = {v}" for k, v in options.to_dict().items()]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(params: ModelParams, config: ModelConfig, path,
                    metadata: dict | None = None):
    """Binary checkpoint: magic, version, JSON header (config, inventory,
    metadata), then all state arrays as little-endian float32."""
    inventory = []
    payload = bytearray()
    offset = 0
    for name, arr, trainable in params.named_arrays():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        inventory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "trainable": trainable})
        payload += raw
        offset += len(raw)
    header = json.dumps({
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "inventory": inventory,
        "metadata": metadata or {},
    }, sort_keys=True).encode()
    blob = CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header))
    blob += header + bytes(payload)
    atomic_write(path, blob)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<HI", f.read(6))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        return json.loads(f.read(hlen).decode())


def load_checkpoint(path):
    """Returns (ModelParams, ModelConfig, metadata); bit-exact round trip."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<HI", f.read(6))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    config = ModelConfig.from_dict(header["config"])
    params = build_model(config, seed=0)
    expected = sum(int(np.prod(e["shape"])) * 4 for e in header["inventory"])
    if len(payload) != expected:
        raise CheckpointError(
            f"{path}: payload is {len(payload)} bytes, inventory expects {expected}")
    arrays = {name: arr for name, arr, _ in params.named_arrays()}
    if set(arrays) != {e["name"] for e in header["inventory"]}:
        raise CheckpointError(f"{path}: inventory does not match the config's model")
    for entry in header["inventory"]:
        arr = arrays[entry["name"]]
        if list(arr.shape) != entry["shape"]:
            raise CheckpointError(
                f"{path}: shape mismatch for {entry['name']}")
        n = arr.size * 4
        chunk = payload[entry["offset"]:entry["offset"] + n]
        arr[...] = np.frombuffer(chunk, dtype="<f4").reshape(arr.shape)
    return params, config, header["metadata"]
