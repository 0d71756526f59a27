"""Command-line front end.

Subcommands: gen-attn, train, eval, analyze, viz, gradcheck.  Every command
is also reachable programmatically through run_command(argv), which returns
the process exit code instead of raising SystemExit.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .analysis import complexity_report, export_feature_maps, time_inference
from .attention import generate_attention_stack
from .datasets import samples_from_manifest
from .io_utils import (load_checkpoint, load_config, load_image,
                       load_landmarks, load_manifest, save_checkpoint,
                       save_image)
from .model import ModelConfig, build_model, model_forward
from .tensor import Tensor, grad_check
from .training import TrainOptions, evaluate, make_folds, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cednn",
        description="Interleaved-group-convolution AU detector utilities")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-attn", help="generate difference-attention maps")
    p.add_argument("--action", required=True, help="action frame image")
    p.add_argument("--neutral", required=True, help="neutral frame image")
    p.add_argument("--lm5", required=True, help="five-point landmarks, action")
    p.add_argument("--lm5-neutral", required=True,
                   help="five-point landmarks, neutral")
    p.add_argument("--lm-dense", required=True, help="dense landmarks, action")
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--fold", type=int, default=0,
                   help="1-based test fold to hold out; 0 trains on everything")
    p.add_argument("--fold-scheme", default="leave-groups",
                   choices=("leave-groups", "fixed-3-fold"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="epoch log output path")

    p = sub.add_parser("eval", help="evaluate a checkpoint, report per-AU F1")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fold", type=int, default=0,
                   help="1-based fold to evaluate on; 0 uses every record")
    p.add_argument("--fold-scheme", default="leave-groups",
                   choices=("leave-groups", "fixed-3-fold"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="write the report here as well as stdout")

    p = sub.add_parser("analyze", help="parameter and FLOP accounting")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--connection", default="res", choices=("res", "dense"))
    p.add_argument("--groups", type=int, default=18)
    p.add_argument("--convention", default="paper",
                   choices=("paper", "implementation"))
    p.add_argument("--time", action="store_true",
                   help="also time a single-image forward pass")
    p.add_argument("--out", help="write the report here as well as stdout")

    p = sub.add_parser("viz", help="export a block's feature maps as a PNG grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--index", type=int, default=0, help="manifest record index")
    p.add_argument("--block", type=int, default=1)
    p.add_argument("--out", required=True, help="output PNG path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-5,
                   help="central-difference step")
    p.add_argument("--max-elems", type=int, default=200,
                   help="elements probed per parameter tensor")
    return parser


# ---------------------------------------------------------------------------
# command bodies

def _cmd_gen_attn(args) -> int:
    stack = generate_attention_stack(
        load_image(args.action), load_image(args.neutral),
        load_landmarks(args.lm5), load_landmarks(args.lm5_neutral),
        load_landmarks(args.lm_dense), out_size=args.size)
    os.makedirs(args.out, exist_ok=True)
    for size in stack.sizes:
        level = stack.level(size)
        for k, thr in enumerate(stack.thresholds):
            save_image(level[k] * 255,
                       os.path.join(args.out, f"attn_t{thr}_{size}.png"))
    print(f"wrote {len(stack.sizes) * len(stack.thresholds)} maps to {args.out}")
    return 0


def _load_config_pair(path):
    if path:
        return load_config(path)
    return ModelConfig(), TrainOptions()


def _split_indices(manifest, fold, scheme):
    if fold == 0:
        return list(range(len(manifest.records))), list(range(len(manifest.records)))
    splits = make_folds(manifest.records, scheme=scheme)
    if not 1 <= fold <= len(splits):
        raise ValueError(f"fold {fold} outside 1..{len(splits)}")
    return splits[fold - 1]


def _cmd_train(args) -> int:
    config, options = _load_config_pair(args.config)
    options.seed = args.seed
    manifest = load_manifest(args.manifest)
    if manifest.d != config.d:
        raise ValueError(f"manifest has {manifest.d} labels, model d={config.d}")
    train_idx, _ = _split_indices(manifest, args.fold, args.fold_scheme)
    samples = samples_from_manifest(manifest, size=config.input_size,
                                    with_stack=config.attention_depth > 0,
                                    indices=train_idx)
    params = build_model(config, seed=args.seed)
    log = open(args.log, "w") if args.log else sys.stdout
    try:
        history = train(params, config, samples, options, log_file=log)
    finally:
        if args.log:
            log.close()
    save_checkpoint(params, config, args.out,
                    metadata={"epochs": len(history), "seed": args.seed,
                              "fold": args.fold,
                              "final_loss": history[-1].mean_loss})
    print(f"trained {len(history)} epochs on {len(samples)} samples; "
          f"checkpoint -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    params, config, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    if manifest.d != config.d:
        raise ValueError(f"manifest has {manifest.d} labels, model d={config.d}")
    _, test_idx = _split_indices(manifest, args.fold, args.fold_scheme)
    samples = samples_from_manifest(manifest, size=config.input_size,
                                    with_stack=config.attention_depth > 0,
                                    indices=test_idx)
    report = evaluate(params, config, samples, threshold=args.threshold)
    text = report.to_text()
    print(text, end="")
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return 0


def _cmd_analyze(args) -> int:
    if args.config:
        config, _ = load_config(args.config)
    else:
        config = ModelConfig(connection=args.connection, groups=args.groups)
    report = complexity_report(config, args.convention)
    text = report.to_text()
    if args.time:
        params = build_model(config, seed=0)
        size = config.input_size
        entry = Tensor(np.zeros((1, 18, size, size), dtype=np.float32))
        cfg = ModelConfig(**{**config.to_dict(), "attention_depth": 0})
        result = time_inference(
            lambda: model_forward(entry, None, params, cfg, training=False))
        text += f"inference\t{result.to_line()}\n"
    print(text, end="")
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return 0


def _cmd_viz(args) -> int:
    params, config, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    samples = samples_from_manifest(manifest, size=config.input_size,
                                    with_stack=config.attention_depth > 0,
                                    indices=[args.index])
    export_feature_maps(params, config, samples[0].entry, samples[0].stack,
                        args.block, args.out)
    print(f"block {args.block} feature grid -> {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    config = ModelConfig(num_blocks=2, input_size=28, attention_depth=0,
                         d=4, reduction_channels=36, top_channels=64)
    params = build_model(config, seed=args.seed, dtype=np.float64)
    rng = np.random.default_rng(args.seed)
    # nudge the normalization shifts off zero: all-zero input regions map to
    # exactly the shift value, and a shift of 0 would park those activations
    # on the relu kink where one-sided and central derivatives differ
    for bp in params.blocks:
        for bn in (bp.bn1, bp.bn2, bp.bn3):
            bn.shift.data += rng.uniform(0.01, 0.02, size=bn.shift.shape) \
                * rng.choice((-1.0, 1.0), size=bn.shift.shape)
    entry = Tensor(rng.uniform(0, 1, size=(2, 18, 28, 28)))

    def forward(*weights):
        probs = model_forward(entry, None, params, config, training=False)
        return T.mean_all(probs)

    worst = grad_check(forward, params.trainable(), eps=args.eps,
                       max_elems=args.max_elems, seed=args.seed)
    ok = worst <= args.tolerance
    print(f"gradcheck: worst relative error {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'} at {args.tolerance:g})")
    return 0 if ok else 1


_COMMANDS = {
    "gen-attn": _cmd_gen_attn,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "analyze": _cmd_analyze,
    "viz": _cmd_viz,
    "gradcheck": _cmd_gradcheck,
}


def run_command(argv) -> int:
    """Parse argv (without the program name) and run the command.

    Returns an exit code; errors print a diagnostic to stderr and return 1
    rather than raising, except for argparse's own usage errors.
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:
        print(f"cednn {args.command}: error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command(sys.argv[1:]))
