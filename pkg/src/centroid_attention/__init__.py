"""Centroid attention: N tokens in, M centroids out.

The centroid update is one gradient-ascent step on a soft clustering
score, unrolled a fixed number of times; standard attention falls out as
the M=N special case. The package provides the numpy reference
implementation (with a compiled kernel core when available), a small
reverse-mode autodiff engine, the energy-function view of the same
updates, a trainable block stack, and counting/benchmark harnesses.
"""

from .attention import (
    CentroidAttentionConfig,
    CentroidAttentionResult,
    HeadParams,
    KnnMask,
    NegHalfSquaredDistance,
    ScaledDotProduct,
    centroid_attention,
    centroid_update_step,
    combine_heads,
    knn_mask,
    self_attention,
    similarity_matrix,
)
from .autodiff import FDReport, Graph, finite_diff_check
from .clustering import (
    ClusterAssignment,
    FarthestPointSampling,
    KMeansResult,
    KMeansWarmStart,
    LearnedLinear,
    MeanPoolStride,
    RandomSampleWithoutReplacement,
    assign,
    farthest_point_sample,
    lloyd_kmeans,
    objective_gradient,
    soft_kmeans_objective,
)
from .energy import (
    Linear,
    NegExp,
    pairwise_energy,
    pairwise_energy_step,
    rbm_energy,
    rbm_energy_step,
)
from .kernels import active_backend, set_backend
from .macs import EncoderShape, MacReport, mac_count, reduction_ratio
from .model import (
    AblationRow,
    AblationTable,
    CABlock,
    EpochStats,
    MLPBlock,
    Model,
    ModelSpec,
    SABlock,
    SynthConfig,
    SynthDataset,
    TrainHyper,
    TrainReport,
    ablate,
    accuracy,
    build_model,
    config_hash,
    default_spec,
    eval_throughput,
    layout_oracle_accuracy,
    synth_dataset,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CentroidAttentionConfig", "CentroidAttentionResult", "HeadParams",
    "KnnMask", "NegHalfSquaredDistance", "ScaledDotProduct",
    "centroid_attention", "centroid_update_step", "combine_heads", "knn_mask",
    "self_attention", "similarity_matrix",
    "FDReport", "Graph", "finite_diff_check",
    "ClusterAssignment", "FarthestPointSampling", "KMeansResult",
    "KMeansWarmStart", "LearnedLinear", "MeanPoolStride",
    "RandomSampleWithoutReplacement", "assign", "farthest_point_sample",
    "lloyd_kmeans", "objective_gradient", "soft_kmeans_objective",
    "Linear", "NegExp", "pairwise_energy", "pairwise_energy_step",
    "rbm_energy", "rbm_energy_step",
    "active_backend", "set_backend",
    "EncoderShape", "MacReport", "mac_count", "reduction_ratio",
    "AblationRow", "AblationTable", "CABlock", "EpochStats", "MLPBlock",
    "Model", "ModelSpec", "SABlock", "SynthConfig", "SynthDataset",
    "TrainHyper", "TrainReport", "ablate", "accuracy", "build_model",
    "config_hash", "default_spec", "eval_throughput",
    "layout_oracle_accuracy", "synth_dataset", "train",
]
