"""CEDNN architecture: interleaved-group-convolution blocks with res/dense
merging, optional squeeze-excitation channel attention, spatial attention
injection, channel reduction and the trainable convolutional head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionStack, compose_block_input
from .tensor import RunningStats, ShufflePlan, Tensor

VALID_GROUPS = (1, 2, 3, 6, 9, 18)
BASE_CHANNELS = 18
SE_MODES = ("none", "after_block", "before_merge")
CONNECTIONS = ("res", "dense")


@dataclass(frozen=True)
class BlockSpec:
    index: int
    groups: int               # L, first group conv
    channels_per_group: int   # M_i, channel count per first-stage group
    connection: str
    se_mode: str
    attention: bool

    @property
    def in_channels(self) -> int:
        return self.groups * self.channels_per_group

    @property
    def out_channels(self) -> int:
        return 2 * self.in_channels


@dataclass
class ModelConfig:
    """Full architecture description; defaults follow the reference setup."""
    connection: str = "res"
    groups: int = 18                   # L
    d: int = 12                        # number of action units
    num_blocks: int = 6
    input_size: int = 224
    attention_depth: int = 2
    attention_mode: str = "grouped"    # or "mean"
    se_mode: str = "none"
    se_reduction: int = 16
    reduction_channels: int = 144
    top_channels: int = 1024
    linear_mode: bool = False          # disables norm/activation inside blocks

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.connection not in CONNECTIONS:
            raise ValueError(f"connection must be one of {CONNECTIONS}")
        if self.groups not in VALID_GROUPS:
            raise ValueError(f"L must divide 18, one of {VALID_GROUPS}")
        if self.se_mode not in SE_MODES:
            raise ValueError(f"se_mode must be one of {SE_MODES}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 1 <= self.num_blocks:
            raise ValueError("need at least one block")
        if not 0 <= self.attention_depth <= self.num_blocks:
            raise ValueError("attention_depth out of range")
        size = self.input_size
        pools = 0
        while size > 7 and size % 2 == 0:
            size //= 2
            pools += 1
        if size != 7 or pools > self.num_blocks:
            raise ValueError(
                f"input_size {self.input_size} must be 7 * 2^k with k <= num_blocks")

    def in_channels(self, index: int) -> int:
        return BASE_CHANNELS * 2 ** (index - 1)

    @property
    def final_channels(self) -> int:
        return 2 * self.in_channels(self.num_blocks)

    @property
    def blocks(self) -> list[BlockSpec]:
        specs = []
        for i in range(1, self.num_blocks + 1):
            c = self.in_channels(i)
            specs.append(BlockSpec(
                index=i,
                groups=self.groups,
                channels_per_group=c // self.groups,
                connection=self.connection,
                se_mode=self.se_mode,
                attention=i <= self.attention_depth,
            ))
        return specs

    def to_dict(self) -> dict:
        return {
            "connection": self.connection, "groups": self.groups, "d": self.d,
            "num_blocks": self.num_blocks, "input_size": self.input_size,
            "attention_depth": self.attention_depth,
            "attention_mode": self.attention_mode,
            "se_mode": self.se_mode, "se_reduction": self.se_reduction,
            "reduction_channels": self.reduction_channels,
            "top_channels": self.top_channels, "linear_mode": self.linear_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# parameters

@dataclass
class BatchNormParams:
    scale: Tensor
    shift: Tensor
    stats: RunningStats


@dataclass
class SEParams:
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor


@dataclass
class BlockParams:
    conv1: Tensor                      # (C, C/L, 3, 3), groups = L
    conv2: Tensor                      # (C, L, 1, 1), groups = M
    fusion: Tensor                     # res: (2C, C, 1, 1); dense: (2C, 2C, 1, 1)
    bn1: BatchNormParams | None
    bn2: BatchNormParams | None
    bn3: BatchNormParams | None
    se: SEParams | None
    plan: ShufflePlan


@dataclass
class ModelParams:
    blocks: list
    reduction_w: Tensor
    reduction_b: Tensor
    top7_w: Tensor
    top7_b: Tensor
    top1_w: Tensor
    top1_b: Tensor
    fc_w: Tensor
    fc_b: Tensor

    def named_arrays(self):
        """Ordered (name, array, trainable) triples covering the full state."""
        out = []
        for i, bp in enumerate(self.blocks, start=1):
            p = f"block{i}"
            out.append((f"{p}.conv1.weight", bp.conv1.data, True))
            out.append((f"{p}.conv2.weight", bp.conv2.data, True))
            out.append((f"{p}.fusion.weight", bp.fusion.data, True))
            for j, bn in enumerate((bp.bn1, bp.bn2, bp.bn3), start=1):
                if bn is None:
                    continue
                out.append((f"{p}.bn{j}.scale", bn.scale.data, True))
                out.append((f"{p}.bn{j}.shift", bn.shift.data, True))
                out.append((f"{p}.bn{j}.running_mean", bn.stats.mean, False))
                out.append((f"{p}.bn{j}.running_var", bn.stats.var, False))
            if bp.se is not None:
                out.append((f"{p}.se.fc1.weight", bp.se.fc1_w.data, True))
                out.append((f"{p}.se.fc1.bias", bp.se.fc1_b.data, True))
                out.append((f"{p}.se.fc2.weight", bp.se.fc2_w.data, True))
                out.append((f"{p}.se.fc2.bias", bp.se.fc2_b.data, True))
        out.append(("reduction.weight", self.reduction_w.data, True))
        out.append(("reduction.bias", self.reduction_b.data, True))
        out.append(("top7.weight", self.top7_w.data, True))
        out.append(("top7.bias", self.top7_b.data, True))
        out.append(("top1.weight", self.top1_w.data, True))
        out.append(("top1.bias", self.top1_b.data, True))
        out.append(("fc.weight", self.fc_w.data, True))
        out.append(("fc.bias", self.fc_b.data, True))
        return out

    def trainable(self) -> list:
        params = []
        for bp in self.blocks:
            params += [bp.conv1, bp.conv2, bp.fusion]
            for bn in (bp.bn1, bp.bn2, bp.bn3):
                if bn is not None:
                    params += [bn.scale, bn.shift]
            if bp.se is not None:
                params += [bp.se.fc1_w, bp.se.fc1_b, bp.se.fc2_w, bp.se.fc2_b]
        params += [self.reduction_w, self.reduction_b, self.top7_w, self.top7_b,
                   self.top1_w, self.top1_b, self.fc_w, self.fc_b]
        return params

    def num_elements(self) -> int:
        return sum(p.size for p in self.trainable())


def _init_weight(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype), requires_grad=True)


def _make_bn(channels, dtype):
    return BatchNormParams(
        scale=Tensor(np.ones(channels, dtype), requires_grad=True),
        shift=_zeros(channels, dtype),
        stats=RunningStats.create(channels, dtype))


def se_bottleneck_width(channels: int, reduction: int) -> int:
    return -(-channels // reduction)  # ceil, so narrow blocks keep >= 1 unit


def build_model(config: ModelConfig, seed: int = 0,
                dtype=T.DEFAULT_DTYPE) -> ModelParams:
    """Seeded fan-in-uniform initialization of every parameter."""
    config.validate()
    rng = np.random.default_rng(seed)
    blocks = []
    for spec in config.blocks:
        c, l, m = spec.in_channels, spec.groups, spec.channels_per_group
        conv1 = _init_weight(rng, (c, c // l, 3, 3), (c // l) * 9, dtype)
        conv2 = _init_weight(rng, (c, l, 1, 1), l, dtype)
        fin = c if spec.connection == "res" else 2 * c
        fusion = _init_weight(rng, (2 * c, fin, 1, 1), fin, dtype)
        if config.linear_mode:
            bn1 = bn2 = bn3 = None
        else:
            bn1, bn2 = _make_bn(c, dtype), _make_bn(c, dtype)
            bn3 = _make_bn(2 * c, dtype)
        se = None
        if spec.se_mode != "none":
            sc = 2 * c if spec.se_mode == "after_block" else c
            hidden = se_bottleneck_width(sc, config.se_reduction)
            se = SEParams(
                fc1_w=_init_weight(rng, (hidden, sc), sc, dtype),
                fc1_b=_zeros(hidden, dtype),
                fc2_w=_init_weight(rng, (sc, hidden), hidden, dtype),
                fc2_b=_zeros(sc, dtype))
        blocks.append(BlockParams(conv1, conv2, fusion, bn1, bn2, bn3, se,
                                  ShufflePlan.create(l, m)))

    cf = config.final_channels
    r, t = config.reduction_channels, config.top_channels
    return ModelParams(
        blocks=blocks,
        reduction_w=_init_weight(rng, (r, cf, 1, 1), cf, dtype),
        reduction_b=_zeros(r, dtype),
        top7_w=_init_weight(rng, (t, r, 7, 7), r * 49, dtype),
        top7_b=_zeros(t, dtype),
        top1_w=_init_weight(rng, (t, t, 1, 1), t, dtype),
        top1_b=_zeros(t, dtype),
        fc_w=_init_weight(rng, (config.d, t), t, dtype),
        fc_b=_zeros(config.d, dtype),
    )


# ---------------------------------------------------------------------------
# forward passes

def se_forward(x: Tensor, se: SEParams) -> Tensor:
    """Squeeze (global average pool), excitation (bottleneck MLP with sigmoid
    gate), then per-channel rescaling of x."""
    n, c = x.shape[0], x.shape[1]
    squeezed = T.flatten(T.global_avg_pool(x))
    h = T.relu(T.fully_connected(squeezed, se.fc1_w, se.fc1_b))
    gates = T.sigmoid(T.fully_connected(h, se.fc2_w, se.fc2_b))
    return T.mul(x, T.reshape(gates, (n, c, 1, 1)))


def _bn_act(x, bn, training):
    if bn is None:
        return x
    return T.relu(T.batch_norm(x, bn.scale, bn.shift, bn.stats, training))


def block_forward(x: Tensor, params: BlockParams, spec: BlockSpec,
                  attention: AttentionStack | None = None,
                  attention_mode: str = "grouped",
                  training: bool = False) -> Tensor:
    """One interleaved-group-convolution block with skip merge and fusion."""
    x = T.as_tensor(x)
    if x.shape[1] != spec.in_channels:
        raise ValueError(
            f"block{spec.index} expects {spec.in_channels} channels, got {x.shape[1]}")
    if spec.attention:
        if attention is None:
            raise ValueError(f"block{spec.index} requires an attention stack")
        x = compose_block_input(x, attention, x.shape[2], mode=attention_mode)

    z1 = T.conv2d(x, params.conv1, groups=spec.groups, padding=1)
    z1 = _bn_act(z1, params.bn1, training)
    z2 = T.channel_shuffle(z1, params.plan)
    y2 = T.conv2d(z2, params.conv2, groups=spec.channels_per_group)
    y2 = _bn_act(y2, params.bn2, training)
    ybar = T.channel_unshuffle(y2, params.plan)
    if spec.se_mode == "before_merge":
        ybar = se_forward(ybar, params.se)
    if spec.connection == "res":
        y3 = T.add(ybar, x)
    else:
        y3 = T.concat_channels(ybar, x)
    out = T.conv2d(y3, params.fusion)
    out = _bn_act(out, params.bn3, training)
    if spec.se_mode == "after_block":
        out = se_forward(out, params.se)
    return out


def model_forward(image_input: Tensor, attention: AttentionStack | None,
                  params: ModelParams, config: ModelConfig,
                  training: bool = False, return_logits: bool = False,
                  capture: dict | None = None) -> Tensor:
    """Blocks with interleaved pooling, channel reduction, convolutional head
    and per-AU sigmoid outputs.

    image_input is the 6x-tiled image, (N, 18, S, S); per-block attention
    modulation happens inside the blocks.
    """
    x = T.as_tensor(image_input)
    s = config.input_size
    if x.shape[1] != BASE_CHANNELS or x.shape[2] != s or x.shape[3] != s:
        raise ValueError(
            f"expected input (N, {BASE_CHANNELS}, {s}, {s}), got {x.shape}")
    if config.attention_depth > 0 and attention is None:
        raise ValueError("attention_depth > 0 but no attention stack given")

    size = s
    for bp, spec in zip(params.blocks, config.blocks):
        x = block_forward(x, bp, spec, attention, config.attention_mode, training)
        if capture is not None:
            capture[spec.index] = x.data
        if size > 7:
            x = T.max_pool_2x2(x)
            size //= 2

    x = T.relu(T.conv2d(x, params.reduction_w, params.reduction_b))
    x = T.relu(T.conv2d(x, params.top7_w, params.top7_b))          # 7x7 valid -> 1x1
    x = T.relu(T.conv2d(x, params.top1_w, params.top1_b))
    logits = T.fully_connected(T.flatten(x), params.fc_w, params.fc_b)
    if return_logits:
        return logits
    return T.sigmoid(logits)
