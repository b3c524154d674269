"""Pain-level detection pipeline.

Derives frame-level pain scores from facial action units, trains CNN
classifiers under subject-disjoint cross-validation, and reports
MAE/MSE/Accuracy. Ships a synthetic face generator so the full pipeline
runs at desk scale.
"""

__version__ = "1.0.0"

from painpipe.facs import ActionUnitVector, PainClass, PainScore, compute_pspi, quantize_pspi
from painpipe.dataset import (
    ClassWeightTable,
    DatasetIndex,
    FoldPlan,
    FrameRecord,
    class_histogram,
    compute_class_weights,
    ingest,
    make_fold_plan,
    resample,
)
from painpipe.synth import SynthConfig, generate_synthetic
from painpipe.preprocess import BoundingBox, PreprocessConfig, augment, crop_resize, detect_face, normalize
from painpipe.models import ModelSpec, build, count_flops, count_parameters, predict_proba
from painpipe.training import Checkpoint, TrainingConfig, gradient_check, train_fold, weighted_cross_entropy
from painpipe.evaluation import MetricsReport, compute_metrics, emit_comparison_plot, emit_report, run_cross_validation
