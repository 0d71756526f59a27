"""Computationally efficient interleaved-group-convolution networks with
difference-image spatial attention for facial action-unit detection."""

from .analysis import (ComplexityReport, TimingResult, complexity_report,
                       count_flops, count_params, export_feature_maps,
                       feature_map_grid, time_inference, verify_param_census)
from .attention import (FIVE_POINT_TEMPLATE_224, THRESHOLDS, AttentionStack,
                        apply_mask, binarize, build_face_mask,
                        compose_block_input, difference_image,
                        estimate_similarity_transform, fill_polygon,
                        generate_attention_stack, tile_image, transform_points,
                        warp_image)
from .cli import run_command
from .datasets import Sample, build_sample, samples_from_manifest
from .io_utils import (CheckpointError, DatasetManifest, ManifestError,
                       ManifestRecord, load_checkpoint, load_config,
                       load_image, load_landmarks, load_manifest,
                       read_checkpoint_header, save_checkpoint, save_config,
                       save_image, save_landmarks, save_manifest)
from .model import (BlockSpec, ModelConfig, ModelParams, block_forward,
                    build_model, model_forward, se_forward)
from .tensor import ShufflePlan, Tensor, grad_check
from .training import (DISFA_FOLDS, EvalReport, SGDMomentum, TrainOptions,
                       bce_with_logits, binarize_intensity, evaluate,
                       f1_from_counts, lr_schedule, make_folds, predict,
                       report_from_predictions, train)

__version__ = "0.1.0"
