"""Non-rigid 3D shape retrieval: spectral descriptors, bag-of-words views,
jointly learned multi-view Mahalanobis metrics, and retrieval evaluation.

The pipeline stages are plain functions over immutable containers; the
multi-view metric learner additionally exposes a scikit-learn style
estimator (:class:`MultiViewMetricLearner`) so it composes with the wider
ecosystem.
"""

from .mesh import TriMesh, MeshValidationError, OffParseError, load_off, write_off
from .spectral import (
    LaplaceOperator,
    Spectrum,
    EigensolverError,
    cotan_laplacian,
    eigendecompose,
    load_spectrum,
    save_spectrum,
)
from .descriptors import GlobalDescriptor, PointSignatureField, hks, shape_dna, sihks, wks
from .coding import (
    Codebook,
    Standardization,
    ViewFeatures,
    assemble_view,
    bow_encode,
    kmeans_fit,
)
from .mfamml import (
    MetricModel,
    MfaGraphPair,
    MultiViewMetricLearner,
    TrainConfig,
    assemble_pv,
    build_graphs,
    fused_distance,
    fused_distance_matrix,
    hsic,
    load_model,
    mfa_init,
    save_model,
    trace_ratio_solve,
    train_alternating,
)
from .evaluation import DistanceMatrix, EvalReport, evaluate, pr_curve, rank_all

__version__ = "0.1.0"

__all__ = [
    "TriMesh",
    "MeshValidationError",
    "OffParseError",
    "load_off",
    "write_off",
    "LaplaceOperator",
    "Spectrum",
    "EigensolverError",
    "cotan_laplacian",
    "eigendecompose",
    "save_spectrum",
    "load_spectrum",
    "GlobalDescriptor",
    "PointSignatureField",
    "shape_dna",
    "hks",
    "sihks",
    "wks",
    "Codebook",
    "Standardization",
    "ViewFeatures",
    "kmeans_fit",
    "bow_encode",
    "assemble_view",
    "MfaGraphPair",
    "TrainConfig",
    "MetricModel",
    "MultiViewMetricLearner",
    "build_graphs",
    "hsic",
    "mfa_init",
    "assemble_pv",
    "trace_ratio_solve",
    "train_alternating",
    "fused_distance",
    "fused_distance_matrix",
    "save_model",
    "load_model",
    "DistanceMatrix",
    "EvalReport",
    "rank_all",
    "evaluate",
    "pr_curve",
    "__version__",
]
