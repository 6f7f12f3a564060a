"""Multi-view 2D CNN segmentation of thin sheet structures in 3D volumes."""

from .data_io import (
    Fold,
    SplitPlan,
    SubjectRecord,
    Volume,
    derive_seed,
    load_volume,
    make_fraction_plan,
    make_loso,
    make_stratified_kfold,
    read_manifest,
    save_volume,
    write_manifest,
)
from .errors import (
    ConfigurationError,
    ContractError,
    FormatError,
    MetricError,
    PreprocessingError,
    SheetsegError,
)
from .metrics import MetricTriple, dice_coefficient, evaluate_subject, hausdorff95, volumetric_similarity
from .model import ModelConfig, TrainedModel, build_model, dice_loss, dice_loss_grad, forward
from .phantom import STYLES, PhantomSpec, generate_cohort, generate_phantom
from .pipeline import (
    EvalReport,
    SegmentationResult,
    TrainSpec,
    fuse_views,
    postprocess,
    predict_view,
    run_experiment,
    run_multiview_ablation,
    segment_subject,
    train_view,
)
from .preprocess import compute_brain_mask, crop_pad_inplane, invert_crop_pad, zscore_normalize
from .stats import TestResult, mann_whitney_u, median_iqr, wilcoxon_signed_rank
from .views import ViewAxis, ViewStack, from_view, to_view

__version__ = "0.1.0"
