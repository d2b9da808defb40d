"""Gradient-compression toolkit: operators, Kashin compression, and the
variance-vs-bits uncertainty principle, with compressed-GD experiment
harnesses."""

from .core import (
    CompressedMessage,
    DecodeError,
    ParameterError,
    RngStream,
    as_vector,
    decode,
)
from .compressors import (
    CompressorSpec,
    build_operator,
    natural_dithering,
    random_sparsification,
    scale_to_contractive,
    scaled_sign,
    standard_dithering,
    ternary_quantize,
    theoretical_alpha,
    theoretical_bits,
    theoretical_omega,
    topk,
)
from .kashin import (
    FrameMatrix,
    KashinCoefficients,
    RipParams,
    estimate_rip,
    generate_frame,
    kashin_compress,
    kashin_representation,
    kashin_representation_batch,
    kashin_variance_bound,
    rip_probability_bound,
    theoretical_rip_params,
)
from .polytope import PolytopeFrame, build_polytope, convex_weights, polytope_compress
from .analysis import (
    VarianceBitsRecord,
    empirical_alpha,
    empirical_normalized_variance,
    up_check,
    up_check_adjusted,
    variance_bits_sweep,
)
from .optim import (
    DistributedProblem,
    DivergenceError,
    QuadraticProblem,
    Trajectory,
    cgd_run,
    dcgd_run,
    generate_distributed_quadratic,
    generate_quadratic,
    suboptimality_series,
)

__version__ = "0.1.0"
