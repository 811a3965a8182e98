from .metrics import (DEFAULT_THRESHOLD, ConfusionCounts, confusion_counts, image_level_score, metric_auc,
                      metric_f1, metric_iou, metric_mcc, pixel_metrics)
from .perturb import KINDS, SEVERITIES, PerturbationSpec, apply_perturbation, psnr
from .protocols import (SWEEP_THRESHOLDS, ModelPredictor, OraclePredictor, aggregate, evaluate_maps, predict,
                        robustness_grid, shuffle_patches, shuffle_split, threshold_sweep, unshuffle_patches)
from .report import MetricReport
