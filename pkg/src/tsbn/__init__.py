"""Task-driven self-supervised bi-channel networks for binary image classification."""
from .datasets import (Dataset, FoldSplit, LabeledSample, SynthParams, load_manifest, make_synthetic,
                       resize_image, stratified_holdout, stratified_kfold, write_manifest)
from .errors import (CheckpointError, ConfigError, DivergenceError, InvalidInput, InvalidManifest,
                     InvalidSplit, IoError, TsbnError, UndefinedMetric)
from .gsim import GsimTarget, gsim_target, normalize_image
from .losses import downstream_loss, restoration_loss, transfer_loss, weighted_bce
from .metrics import (ConfusionCounts, CVReport, MetricsReport, aggregate_folds, compute_metrics,
                      confusion, evaluate_scores, roc_auc)
from .nets import ArchConfig, ModelBundle, build_models, classifier_forward, pretext_forward, project
from .trainer import (TrainConfig, TrainedOutput, TrainHistory, cross_validate, downstream_step,
                      evaluate, predict_proba, pretext_step, train, train_baseline, train_tsbn)

__version__ = "0.1.0"
