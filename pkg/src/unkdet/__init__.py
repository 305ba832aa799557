"""Toy set-prediction detector with source-free domain adaptation.

The package trains a small query-based detector on clean synthetic scenes,
then adapts it to a fog-corrupted target domain with a mean-teacher loop.
Two optional mechanisms drive the adaptation study: collaborative decoding
(cross-domain attention against a truncated-SVD encoding of the target
feature map) and principal-axis unknown pseudo-labeling.

Typical flow: :func:`render_dataset` -> :func:`pretrain_source` ->
:func:`adapt_target` -> :func:`evaluate`, or the same pipeline through the
``unkdet`` command line (see :mod:`unkdet.cli`).
"""

from .adapt import (METHODS, STRONG, WEAK, AdamState, AugmentSpec,
                    TeacherStudent, TrainConfig, adapt_target,
                    adaptation_step, augment, ema_update,
                    method_uses_collab, method_uses_paul, pretrain_source)
from .checkpoint import TrainingState, load_checkpoint, save_checkpoint
from .collab import decode_plain, decode_with_collab, forward, target_encode
from .config import (ExperimentConfig, config_to_dict, load_config,
                     parse_config)
from .errors import (ConfigError, DegenerateInputError, NumericError,
                     ParameterError, ShapeError, UsageError)
from .experiment import (ABLATION_GRIDS, CSV_HEADER, ablate, run_experiment,
                         write_report)
from .metrics import (EvalConfig, MetricsReport, average_precision, evaluate,
                      h_score, u_recall)
from .model import (Box, DetectorConfig, init_params, make_proposals,
                    param_shapes)
from .pseudolabel import (Proposal, PseudoLabelConfig, PseudoLabelSet,
                          confidence_only_pipeline, objectness_scores,
                          principal_axes, pseudo_label_pipeline)
from .scenes import (KNOWN_CLASSES, NOVEL_CLASSES, DataConfig, Scene,
                     SceneConfig, generate_scene, load_dataset,
                     render_dataset)

__version__ = "0.1.0"

__all__ = [
    "ABLATION_GRIDS", "AdamState", "AugmentSpec", "Box", "CSV_HEADER",
    "ConfigError", "DataConfig", "DegenerateInputError", "DetectorConfig",
    "EvalConfig", "ExperimentConfig", "KNOWN_CLASSES", "METHODS",
    "MetricsReport", "NOVEL_CLASSES",
    "NumericError", "ParameterError", "Proposal", "PseudoLabelConfig",
    "PseudoLabelSet", "STRONG", "Scene", "SceneConfig", "ShapeError",
    "TeacherStudent", "TrainConfig", "TrainingState", "UsageError", "WEAK",
    "ablate", "adapt_target", "adaptation_step", "augment",
    "average_precision", "config_to_dict", "confidence_only_pipeline",
    "decode_plain", "decode_with_collab", "ema_update", "evaluate",
    "forward", "generate_scene", "h_score", "init_params", "load_checkpoint",
    "load_config", "load_dataset", "make_proposals", "method_uses_collab",
    "method_uses_paul", "objectness_scores", "param_shapes", "parse_config",
    "pretrain_source", "principal_axes", "pseudo_label_pipeline",
    "render_dataset", "run_experiment", "save_checkpoint", "target_encode",
    "u_recall", "write_report",
]
