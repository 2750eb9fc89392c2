"""
frame-forge Package

Desk-scale computational harmonic analysis with support for:
- Localized atom families and Wiener amalgam norms
- Frame bounds, canonical duals and pseudo-inverses (eigen and contour)
- Frame surgery: quilting donor frames over a covering
- Quilted Gabor frames, shift-invariant systems and Gabor multipliers
- Quilted sampling sets through reproducing kernels
"""

from .grid_core import (
    Box,
    NodeSet,
    Weight,
    WeightKind,
    ModeratedPair,
    FrameForgeError,
    EnvelopeError,
    CertificationError,
    ConfigError,
    rel_separation,
    is_L_dense,
    conv_nodes_check,
    weighted_seq_norm,
)

from .amalgam import (
    AtomFamily,
    Envelope,
    SchurMatrix,
    family_amalgam_norm,
    synthesis_bound,
    matrix_bound,
    correlation_bound,
    analysis_bound,
)

from .frame_engine import (
    FramePair,
    SpectrumInfo,
    frame_bounds,
    canonical_dual,
    pseudo_inverse_svd,
    pseudo_inverse_contour,
    universal_projector,
    decay_fit,
    exterior_frame_pair,
)

from .surgery import (
    Covering,
    PartitionOfUnity,
    QuiltedSystem,
    build_partition,
    select_nodes,
    approx_reconstruct,
    quilted_frame_bounds,
    certify_quilt,
    error_sweep,
)

from .gabor_tf import (
    GaussWindow,
    TFLattice,
    GaborDonor,
    stft,
    tf_atom,
    gabor_frame_bounds,
    quilt_gabor,
)

from .sis_kn import (
    LatticePair,
    FiberGram,
    KNSymbol,
    GaborMultiplier,
    bracket,
    fiber_gram,
    quilt_sis,
    kn_symbol_rank_one,
    multiplier_recover,
)

from .sampling import (
    SamplingExperiment,
    kernel_at,
    sampling_bounds,
    quilt_sampling,
)

from .experiment_runner import (
    ExperimentConfig,
    ExperimentRunner,
    SelfTest,
    load_config,
)

__version__ = "0.1.0"
__author__ = "frame-forge Team"

__all__ = [
    "Box", "NodeSet", "Weight", "WeightKind", "ModeratedPair",
    "FrameForgeError", "EnvelopeError", "CertificationError", "ConfigError",
    "rel_separation", "is_L_dense", "conv_nodes_check", "weighted_seq_norm",
    "AtomFamily", "Envelope", "SchurMatrix", "family_amalgam_norm",
    "synthesis_bound", "matrix_bound", "correlation_bound", "analysis_bound",
    "FramePair", "SpectrumInfo", "frame_bounds", "canonical_dual",
    "pseudo_inverse_svd", "pseudo_inverse_contour", "universal_projector",
    "decay_fit", "exterior_frame_pair",
    "Covering", "PartitionOfUnity", "QuiltedSystem", "build_partition", "select_nodes",
    "approx_reconstruct", "quilted_frame_bounds", "certify_quilt", "error_sweep",
    "GaussWindow", "TFLattice", "GaborDonor", "stft", "tf_atom", "gabor_frame_bounds", "quilt_gabor",
    "LatticePair", "FiberGram", "KNSymbol", "GaborMultiplier", "bracket", "fiber_gram",
    "quilt_sis", "kn_symbol_rank_one", "multiplier_recover",
    "SamplingExperiment", "kernel_at", "sampling_bounds", "quilt_sampling",
    "ExperimentConfig", "ExperimentRunner", "SelfTest", "load_config",
]
