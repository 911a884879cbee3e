"""Analysis and design of serially concatenated LDGM and LDPC-GM codes on
the binary-input AWGN channel: quantized density evolution, decoding
thresholds, error-floor bounds, finite-length sum-product simulation, and
degree-distribution optimization."""

from .analysis import (
    ChannelPoint,
    ThresholdResult,
    biawgn_capacity,
    concatenated_threshold,
    convergence_profile,
    critical_ber,
    eb_no_from_sigma,
    ldgm_lower_bound,
    outer_threshold,
    q_function,
    scldgm_lower_bound,
    shannon_limit_db,
    sigma_from_eb_no,
    super_channel_sigma_bound,
)
from .codec import (
    ConcatenatedCode,
    DecodeResult,
    RateSpec,
    SimPoint,
    SparseBipartiteGraph,
    build_concatenated,
    build_ldgm,
    build_ldpc,
    load_code,
    save_code,
    simulate_ber,
    sp_decode_joint,
    sp_decode_two_step,
    transmit,
)
from .dde import (
    CodeEnsemble,
    CodeKind,
    DdeTrace,
    TraceStatus,
    decision_pmf,
    evolve_inner,
    evolve_outer,
    ldgm_ensemble_from_vn,
    regular_ensemble,
    two_step_dde,
)
from .degree import (
    DegreeDistribution,
    Perspective,
    average_degree,
    complete_check_distribution,
    edge_dist,
    edge_to_node,
    node_dist,
    node_to_edge,
)
from .grid import (
    LlrGrid,
    QuantizedPmf,
    convolve,
    convolve_power,
    gaussian_llr_pmf,
    mix,
    pairwise_llr,
    r_combine,
    r_power,
    unit_pmf,
)
from .optimizer import (
    Candidate,
    DeResult,
    OptimizationConfig,
    de_search,
    evaluate_candidate,
)

__version__ = "0.1.0"
