"""Anomaly scoring toolkit for world-model outputs.

Builds pixel-wise difference maps between observed frames and a world
model's reconstructions/predictions, fuses them under configurable
weights, refines scores with instance masks, and evaluates with pooled
AP / FPR95 / AUROC.  Ships a deterministic synthetic benchmark.
"""

from .core_io import (
    AnomalyMap,
    BinaryLabelMap,
    ContractError,
    DatasetManifest,
    DiffKind,
    FeatureStack,
    FormatError,
    FusionWeights,
    ImageTensor,
    InstanceLabelMap,
    PredictionHistory,
    UmadError,
    load_manifest,
    read_tensor,
    save_manifest,
    write_tensor,
)
from .diffs import (
    SSIMConfig,
    abs_diff,
    l2_baseline,
    mse_diff,
    perceptual_diff,
    ssim_diff,
    temporal_diff,
)
from .features import ExtractorConfig, extract_features, load_features
from .metrics import (
    EvalReport,
    auroc,
    average_precision,
    evaluate_pooled,
    fpr_at_95_tpr,
    oracle_ap,
    oracle_auroc,
    oracle_fpr95,
    pool,
)
from .pipeline import (
    MaskSource,
    RefineStrategy,
    RunConfig,
    SweepRow,
    default_sweep_grid,
    run_baseline,
    run_evaluate,
    run_score,
    run_sweep,
)
from .scoring import (
    MaskScore,
    MaskScoreTable,
    fuse,
    normalize_map,
    refine_max,
    refine_mean,
    refine_top1,
)
from .synthgen import SynthConfig, describe, generate

__version__ = "0.1.0"
