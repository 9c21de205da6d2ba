"""Sequence mixing as explicit matrices.

Every mixer here (softmax attention, random-feature linear attention,
selective state-space scans, and their bidirectional combinations) can
be materialized as a T x T matrix acting on the sequence axis, so the
fast recurrent or kernelized form and the dense matrix form can be
checked against each other, classified by off-diagonal block rank, and
compared on equal footing. The package adds the block architecture
built on these mixers, structure and locality diagnostics, runtime
scaling benchmarks, and a CLI that drives all of it reproducibly from
a single seed.
"""

from .attention import (
    MhaWeights,
    MultiHeadConfig,
    OrthogonalFeatureMatrix,
    QkvTriple,
    RopeConfig,
    apply_rope,
    draw_orthogonal_features,
    favor_attention,
    favor_mixer,
    multi_head_attention,
    positive_feature_map,
    softmax_attention,
    softmax_mixer,
)
from .bench import (
    OP_LABELS,
    BenchSample,
    ScalingReport,
    fit_loglog_slope,
    time_operation,
    write_bench_csv,
    write_scaling_csv,
)
from .blocks import (
    LAYER_NORM_EPS,
    MIXER_KINDS,
    TENSOR_MAGIC,
    AttentionMixerConfig,
    BiMambaMixerConfig,
    BlockStackConfig,
    DcHydraBlock,
    DilatedConvWeights,
    FfwWeights,
    HydraMixerConfig,
    block_forward,
    dilated_dw_conv,
    dilation_for_block,
    ffw_apply,
    init_stack,
    layer_norm_apply,
    load_tensors,
    mixer_apply,
    mixer_kind_of,
    save_tensors,
    silu,
    stack_forward,
    stack_from_tensors,
    stack_to_tensors,
    validate_stack,
    with_zeroed_projections,
)
from .cli import ConfigError, RunConfig, main
from .diagnostics import (
    Histogram,
    MixerReport,
    approximation_error_curve,
    build_mixer_report,
    default_windows,
    head_average,
    locality_mass,
    numerical_rank,
    pairwise_l2_histogram,
    write_approx_curve,
    write_l2_hist,
    write_locality,
    write_rank_report,
)
from .mixer_core import (
    DEFAULT_RANK_TOL,
    FeatureSequence,
    MatrixMixer,
    MixerClass,
    NumericRangeError,
    ShapeError,
    StructureReport,
    apply_mixer,
    check_structure,
)
from .rng import derive_seed, make_rng
from .ssm import (
    BiMambaParams,
    HydraParams,
    ScanParams,
    SelectiveWeights,
    bimamba_apply,
    bimamba_channelwise,
    bimamba_mixer,
    hydra_apply,
    hydra_channelwise,
    hydra_mixer,
    segment_product,
    selective_parameterize,
    ssm_mixer,
    ssm_scan,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core
    "DEFAULT_RANK_TOL",
    "FeatureSequence",
    "MatrixMixer",
    "MixerClass",
    "NumericRangeError",
    "ShapeError",
    "StructureReport",
    "apply_mixer",
    "check_structure",
    # rng
    "derive_seed",
    "make_rng",
    # attention
    "MhaWeights",
    "MultiHeadConfig",
    "OrthogonalFeatureMatrix",
    "QkvTriple",
    "RopeConfig",
    "apply_rope",
    "draw_orthogonal_features",
    "favor_attention",
    "favor_mixer",
    "multi_head_attention",
    "positive_feature_map",
    "softmax_attention",
    "softmax_mixer",
    # ssm
    "BiMambaParams",
    "HydraParams",
    "ScanParams",
    "SelectiveWeights",
    "bimamba_apply",
    "bimamba_channelwise",
    "bimamba_mixer",
    "hydra_apply",
    "hydra_channelwise",
    "hydra_mixer",
    "segment_product",
    "selective_parameterize",
    "ssm_mixer",
    "ssm_scan",
    # blocks
    "LAYER_NORM_EPS",
    "MIXER_KINDS",
    "TENSOR_MAGIC",
    "AttentionMixerConfig",
    "BiMambaMixerConfig",
    "BlockStackConfig",
    "DcHydraBlock",
    "DilatedConvWeights",
    "FfwWeights",
    "HydraMixerConfig",
    "block_forward",
    "dilated_dw_conv",
    "dilation_for_block",
    "ffw_apply",
    "init_stack",
    "layer_norm_apply",
    "load_tensors",
    "mixer_apply",
    "mixer_kind_of",
    "save_tensors",
    "silu",
    "stack_forward",
    "stack_from_tensors",
    "stack_to_tensors",
    "validate_stack",
    "with_zeroed_projections",
    # diagnostics
    "Histogram",
    "MixerReport",
    "approximation_error_curve",
    "build_mixer_report",
    "default_windows",
    "head_average",
    "locality_mass",
    "numerical_rank",
    "pairwise_l2_histogram",
    "write_approx_curve",
    "write_l2_hist",
    "write_locality",
    "write_rank_report",
    # bench
    "OP_LABELS",
    "BenchSample",
    "ScalingReport",
    "fit_loglog_slope",
    "time_operation",
    "write_bench_csv",
    "write_scaling_csv",
    # cli
    "ConfigError",
    "RunConfig",
    "main",
]
