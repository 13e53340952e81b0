"""Labeled latent-signature archives with reject-option classification.

The pipeline has three stages: decompose labeled training data into a
hierarchy of nonnegative latent signatures with automatic rank selection,
store the label-uniform signatures in an archive, and classify new samples
by nonnegative projection onto the archive with a similarity threshold that
turns poor reconstructions into rejections (novel-class alerts).
"""

from .archive import (
    ArchiveEntry,
    BuildConfig,
    BuildReport,
    SignatureArchive,
    UnresolvedGroup,
    build_archive,
    load_archive,
    save_archive,
)
from .dataio import (
    GroundTruth,
    LabeledDataset,
    NormalizationParams,
    SplitResult,
    SynthSpec,
    apply_normalization,
    generate_synthetic,
    load_csv,
    normalize,
    save_csv,
    split_holdout,
)
from .errors import (
    ArchiveFormatError,
    DegenerateBuildError,
    DegenerateInputError,
    SigArchiveError,
    ValidationError,
)
from .evaluation import (
    EvalReport,
    RiskCoveragePoint,
    aurc,
    classification_metrics,
    evaluate_predictions,
    rejection_rates,
    risk_coverage_curve,
)
from .inference import (
    DECISION_CLASSIFIED,
    DECISION_REJECTED,
    InferenceConfig,
    Prediction,
    classify,
    classify_batch,
)
from .linalg import (
    FactorPair,
    FeatureMatrix,
    SolverOptions,
    nmf_factorize,
    nnls_solve,
    relative_error,
)
from .rank import (
    EnsembleConfig,
    RankSelectionReport,
    RankStats,
    select_rank,
)

__version__ = "0.1.0"

__all__ = [
    "ArchiveEntry",
    "ArchiveFormatError",
    "BuildConfig",
    "BuildReport",
    "DECISION_CLASSIFIED",
    "DECISION_REJECTED",
    "DegenerateBuildError",
    "DegenerateInputError",
    "EnsembleConfig",
    "EvalReport",
    "FactorPair",
    "FeatureMatrix",
    "GroundTruth",
    "InferenceConfig",
    "LabeledDataset",
    "NormalizationParams",
    "Prediction",
    "RankSelectionReport",
    "RankStats",
    "RiskCoveragePoint",
    "SigArchiveError",
    "SignatureArchive",
    "SolverOptions",
    "SplitResult",
    "SynthSpec",
    "UnresolvedGroup",
    "ValidationError",
    "apply_normalization",
    "aurc",
    "build_archive",
    "classification_metrics",
    "classify",
    "classify_batch",
    "evaluate_predictions",
    "generate_synthetic",
    "load_archive",
    "load_csv",
    "nmf_factorize",
    "nnls_solve",
    "normalize",
    "rejection_rates",
    "relative_error",
    "risk_coverage_curve",
    "save_archive",
    "save_csv",
    "select_rank",
    "split_holdout",
    "__version__",
]
