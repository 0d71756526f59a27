"""Loss, optimizer, learning-rate schedules, fold handling and the
frame-based multi-label F1 evaluation protocol."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, ModelParams, model_forward
from .tensor import Tensor, _accum, _node, as_tensor

# Fixed subject-exclusive 3-fold partition for the DISFA+ protocol.
DISFA_FOLDS = (
    ("SN027", "SN010", "SN007"),
    ("SN013", "SN025", "SN003"),
    ("SN009", "SN001", "SN004"),
)


# ---------------------------------------------------------------------------
# loss

def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean sigmoid cross-entropy over batch and AUs, computed in the
    numerically stable logit form."""
    logits = as_tensor(logits)
    y = np.asarray(labels)
    if y.shape != logits.shape:
        raise ValueError(f"labels shape {y.shape} != logits shape {logits.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be in {0, 1}")
    z = logits.data
    y = y.astype(z.dtype)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    count = z.size

    def backward(go):
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                       np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        _accum(logits, go * (sig - y) / count)

    return _node(np.asarray(per.mean()), (logits,), backward)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class SGDMomentum:
    """v <- momentum * v + g + weight_decay * w;  w <- w - lr * v."""
    params: list
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: list = None

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= (self.lr * v).astype(p.data.dtype)


def lr_schedule(epoch: int, profile: str = "disfa", base_lr: float = 0.01,
                step: int = 5, factor: float = 0.1) -> float:
    """Step decay: the ck profile drops 10x every 20 epochs, disfa every 5."""
    if profile == "ck":
        step = 20
    elif profile == "disfa":
        step = 5
    elif profile != "custom":
        raise ValueError(f"unknown lr profile {profile!r}")
    return base_lr * factor ** (epoch // step)


# ---------------------------------------------------------------------------
# labels and folds

def binarize_intensity(intensity: int) -> int:
    """AU intensity codes 0..5 -> active iff level >= 2."""
    if not 0 <= intensity <= 5:
        raise ValueError(f"intensity {intensity} outside 0..5")
    return 1 if intensity >= 2 else 0


def make_folds(records, scheme: str = "fixed-3-fold", n_folds: int = 3):
    """Subject-exclusive train/test splits.

    records: iterable with a .subject attribute (manifest records or samples).
    Returns a list of (train_indices, test_indices) pairs, one per fold.
    """
    records = list(records)
    subjects = sorted({r.subject for r in records})
    if scheme == "fixed-3-fold":
        fold_sets = [set(f) for f in DISFA_FOLDS]
        known = set().union(*fold_sets)
        missing = [s for s in subjects if s not in known]
        if missing:
            raise ValueError(f"subjects not in the fixed fold table: {missing}")
    elif scheme == "leave-groups":
        fold_sets = [set() for _ in range(n_folds)]
        for i, s in enumerate(subjects):
            fold_sets[i % n_folds].add(s)
    else:
        raise ValueError(f"unknown fold scheme {scheme!r}")

    seen = {}
    for k, fs in enumerate(fold_sets):
        for s in fs:
            if s in seen:
                raise ValueError(f"subject {s} assigned to folds {seen[s]} and {k}")
            seen[s] = k

    splits = []
    for fs in fold_sets:
        test = [i for i, r in enumerate(records) if r.subject in fs]
        train = [i for i, r in enumerate(records) if r.subject not in fs]
        splits.append((train, test))
    return splits


# ---------------------------------------------------------------------------
# metrics

@dataclass
class AUScore:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    per_au: list
    average_f1: float

    def to_text(self) -> str:
        lines = ["au\ttp\tfp\tfn\ttn\tprecision\trecall\tf1"]
        for i, s in enumerate(self.per_au):
            lines.append(f"{i}\t{s.tp}\t{s.fp}\t{s.fn}\t{s.tn}\t"
                         f"{s.precision:.6f}\t{s.recall:.6f}\t{s.f1:.6f}")
        lines.append(f"average_f1\t{self.average_f1:.6f}")
        return "\n".join(lines) + "\n"


def f1_from_counts(tp: int, fp: int, fn: int):
    """(precision, recall, F1); any 0/0 denominator yields 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def report_from_predictions(probs: np.ndarray, labels: np.ndarray,
                            threshold: float = 0.5) -> EvalReport:
    """Per-AU confusion counts over frames; prediction positive iff
    probability >= threshold."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ValueError("prediction/label shape mismatch")
    pred = probs >= threshold
    pos = labels == 1
    per = []
    for j in range(labels.shape[1]):
        tp = int(np.sum(pred[:, j] & pos[:, j]))
        fp = int(np.sum(pred[:, j] & ~pos[:, j]))
        fn = int(np.sum(~pred[:, j] & pos[:, j]))
        tn = int(np.sum(~pred[:, j] & ~pos[:, j]))
        p, r, f1 = f1_from_counts(tp, fp, fn)
        per.append(AUScore(tp, fp, fn, tn, p, r, f1))
    avg = float(np.mean([s.f1 for s in per])) if per else 0.0
    return EvalReport(per, avg)


def predict(params: ModelParams, config: ModelConfig, samples,
            batch_size: int = 16) -> np.ndarray:
    """Eval-mode probabilities for a list of samples (.entry, .stack)."""
    out = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start:start + batch_size]
        entries = np.stack([s.entry for s in batch])
        stacks = [s.stack for s in batch]
        if all(st is None for st in stacks):
            stacks = None
        probs = model_forward(Tensor(entries), stacks, params, config,
                              training=False)
        out.append(probs.data)
    return np.concatenate(out)


def evaluate(params: ModelParams, config: ModelConfig, samples,
             threshold: float = 0.5) -> EvalReport:
    """samples: list of objects with .entry, .stack and .labels."""
    probs = predict(params, config, samples)
    labels = np.array([s.labels for s in samples])
    return report_from_predictions(probs, labels, threshold)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class TrainOptions:
    epochs: int = 20
    batch_size: int = 32
    base_lr: float = 0.01
    lr_profile: str = "disfa"
    lr_step: int = 5
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0
    eval_every: int = 0        # 0 disables in-loop evaluation
    f1_stop: float = 0.0       # stop early once train F1 reaches this

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "epochs", "batch_size", "base_lr", "lr_profile", "lr_step",
            "momentum", "weight_decay", "seed", "eval_every", "f1_stop")}


@dataclass
class EpochLog:
    epoch: int
    lr: float
    mean_loss: float
    f1: float | None = None

    def to_line(self) -> str:
        tail = "" if self.f1 is None else f"\tf1={self.f1:.6f}"
        return f"epoch={self.epoch}\tlr={self.lr:.6g}\tloss={self.mean_loss:.8f}{tail}"


def train(params: ModelParams, config: ModelConfig, samples,
          options: TrainOptions, log_file=None):
    """Seeded mini-batch training; returns the per-epoch log list.

    samples: list of objects with .entry ((18, S, S) float array), .stack
    (AttentionStack or None) and .labels ({0,1}^d).  The last partial batch
    is kept.
    """
    if not samples:
        raise ValueError("empty training set")
    d = len(samples[0].labels)
    if d != config.d:
        raise ValueError(f"label arity {d} != model d={config.d}")

    labels = np.array([s.labels for s in samples])
    opt = SGDMomentum(params.trainable(), lr=options.base_lr,
                      momentum=options.momentum,
                      weight_decay=options.weight_decay)
    rng = np.random.default_rng(options.seed)
    history = []
    for epoch in range(options.epochs):
        lr = lr_schedule(epoch, options.lr_profile, options.base_lr, options.lr_step)
        opt.lr = lr
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), options.batch_size):
            idx = order[start:start + options.batch_size]
            entries = np.stack([samples[i].entry for i in idx])
            stacks = [samples[i].stack for i in idx]
            if all(st is None for st in stacks):
                stacks = None
            logits = model_forward(Tensor(entries), stacks, params, config,
                                   training=True, return_logits=True)
            loss = bce_with_logits(logits, labels[idx])
            if lr > 0:
                opt.zero_grad()
                loss.backward()
                opt.step()
            losses.append(loss.item())

        entry = EpochLog(epoch, lr, float(np.mean(losses)))
        if options.eval_every and (epoch + 1) % options.eval_every == 0:
            entry.f1 = evaluate(params, config, samples).average_f1
        history.append(entry)
        if log_file is not None:
            log_file.write(entry.to_line() + "\n")
            log_file.flush()
        if entry.f1 is not None and options.f1_stop and entry.f1 >= options.f1_stop:
            break
    return history
