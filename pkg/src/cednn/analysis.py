"""Closed-form parameter/FLOP accounting, feature-map visualization and an
inference timing harness.

Two counting conventions are reported side by side so the assumptions are
auditable:

* "paper"          - convolution and fully-connected weights only, no biases,
                     no normalization parameters, no SE parameters, 12 output
                     units.  This is the convention that reproduces the
                     published complexity table.
* "implementation" - everything the built model actually trains, for the
                     configured output arity; totals equal an exact element
                     count over an instantiated parameter set.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, ModelParams, model_forward, \
    se_bottleneck_width
from .tensor import Tensor

CONVENTIONS = ("paper", "implementation")


@dataclass
class LayerRecord:
    name: str
    kind: str            # conv | fc | bn | se | pool
    params: int
    macs: int
    out_shape: tuple

    def to_line(self) -> str:
        shape = "x".join(str(v) for v in self.out_shape)
        return f"{self.name}\t{self.kind}\t{self.params}\t{self.macs}\t{shape}"


@dataclass
class ComplexityReport:
    convention: str
    records: list

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.records)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.records)

    @property
    def total_flops(self) -> int:
        """Counting one multiply-accumulate as two floating point operations."""
        return 2 * self.total_macs

    def layer_census(self) -> dict:
        census = {}
        for r in self.records:
            census[r.kind] = census.get(r.kind, 0) + 1
        return census

    def to_text(self) -> str:
        lines = [f"convention\t{self.convention}",
                 "name\tkind\tparams\tmacs\tout_shape"]
        lines += [r.to_line() for r in self.records]
        lines.append(f"total_params\t{self.total_params}")
        lines.append(f"total_macs\t{self.total_macs}")
        lines.append(f"total_flops_2xmac\t{self.total_flops}")
        census = self.layer_census()
        lines.append("layer_census\t" + ",".join(
            f"{k}={census[k]}" for k in sorted(census)))
        return "\n".join(lines) + "\n"


def complexity_report(config: ModelConfig, convention: str = "paper") -> ComplexityReport:
    """Per-layer parameter and multiply-accumulate counts, closed form."""
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    impl = convention == "implementation"
    d = config.d if impl else 12
    records = []
    size = config.input_size
    for spec in config.blocks:
        c, l, m = spec.in_channels, spec.groups, spec.channels_per_group
        p = f"block{spec.index}"
        area = size * size

        w1 = c * (c // l) * 9
        records.append(LayerRecord(f"{p}.conv1", "conv", w1, w1 * area, (c, size, size)))
        if impl:
            records.append(LayerRecord(f"{p}.bn1", "bn", 2 * c, 0, (c, size, size)))
        w2 = c * l
        records.append(LayerRecord(f"{p}.conv2", "conv", w2, w2 * area, (c, size, size)))
        if impl:
            records.append(LayerRecord(f"{p}.bn2", "bn", 2 * c, 0, (c, size, size)))
        fin = c if spec.connection == "res" else 2 * c
        w3 = 2 * c * fin
        records.append(LayerRecord(f"{p}.fusion", "conv", w3, w3 * area,
                                   (2 * c, size, size)))
        if impl:
            records.append(LayerRecord(f"{p}.bn3", "bn", 4 * c, 0, (2 * c, size, size)))
        if impl and spec.se_mode != "none":
            sc = 2 * c if spec.se_mode == "after_block" else c
            hidden = se_bottleneck_width(sc, config.se_reduction)
            se_params = hidden * sc + hidden + sc * hidden + sc
            se_macs = hidden * sc + sc * hidden
            records.append(LayerRecord(f"{p}.se", "se", se_params, se_macs,
                                       (2 * c, size, size)))
        if size > 7:
            size //= 2
            records.append(LayerRecord(f"{p}.pool", "pool", 0, 0,
                                       (2 * c, size, size)))

    cf, r, t = config.final_channels, config.reduction_channels, config.top_channels
    bias = lambda n: n if impl else 0
    wr = r * cf
    records.append(LayerRecord("reduction", "conv", wr + bias(r),
                               wr * size * size, (r, size, size)))
    w7 = t * r * 49
    records.append(LayerRecord("top7", "conv", w7 + bias(t), w7, (t, 1, 1)))
    wt = t * t
    records.append(LayerRecord("top1", "conv", wt + bias(t), wt, (t, 1, 1)))
    wf = d * t
    records.append(LayerRecord("fc", "fc", wf + bias(d), wf, (d,)))
    return ComplexityReport(convention, records)


def count_params(config: ModelConfig, convention: str = "paper") -> ComplexityReport:
    return complexity_report(config, convention)


def count_flops(config: ModelConfig, convention: str = "paper") -> ComplexityReport:
    return complexity_report(config, convention)


def verify_param_census(config: ModelConfig, params: ModelParams) -> bool:
    """Implementation-convention totals must equal the exact element count of
    an instantiated model."""
    return complexity_report(config, "implementation").total_params == params.num_elements()


# ---------------------------------------------------------------------------
# feature-map visualization

def feature_map_grid(features: np.ndarray) -> np.ndarray:
    """Tile per-channel min-max normalized maps into one uint8 image.

    features: (C, H, W).  Constant channels render as mid-gray 128; grid is
    ceil(sqrt(C)) cells per side, unused cells black.
    """
    c, h, w = features.shape
    side = int(np.ceil(np.sqrt(c)))
    grid = np.zeros((side * h, side * w), dtype=np.uint8)
    for i in range(c):
        ch = features[i].astype(np.float64)
        lo, hi = ch.min(), ch.max()
        if hi > lo:
            img = np.rint((ch - lo) / (hi - lo) * 255).astype(np.uint8)
        else:
            img = np.full((h, w), 128, dtype=np.uint8)
        r, col = divmod(i, side)
        grid[r * h:(r + 1) * h, col * w:(col + 1) * w] = img
    return grid


def export_feature_maps(params: ModelParams, config: ModelConfig,
                        entry: np.ndarray, stack, block_index: int,
                        output_path) -> np.ndarray:
    """Run a forward pass, grab one block's output and write the channel grid
    as a PNG.  Returns the grid array."""
    from PIL import Image

    capture = {}
    model_forward(Tensor(np.asarray(entry)[None]), stack, params, config,
                  training=False, capture=capture)
    if block_index not in capture:
        raise ValueError(f"no block {block_index}; model has {sorted(capture)}")
    grid = feature_map_grid(capture[block_index][0])
    Image.fromarray(grid, mode="L").save(output_path)
    return grid


# ---------------------------------------------------------------------------
# timing

@dataclass
class TimingResult:
    mean_ms: float
    std_ms: float
    samples_ms: list

    def to_line(self) -> str:
        return f"{self.mean_ms:.2f} +/- {self.std_ms:.2E} ms over {len(self.samples_ms)} runs"


def time_inference(forward, trials: int = 12, warmup: int = 1) -> TimingResult:
    """Wall-clock per-call timing of a zero-argument forward callable; one
    warm-up pass, then `trials` measured passes."""
    if trials < 1:
        raise ValueError("need at least one trial")
    for _ in range(warmup):
        forward()
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        forward()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return TimingResult(float(np.mean(samples)), float(np.std(samples)), samples)
