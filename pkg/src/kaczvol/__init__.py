"""kaczvol: randomized block Kaczmarz solvers driven by exact volume sampling.

Row subsets are drawn with probability proportional to the squared volume
of the row parallelepiped, which provably accelerates Kaczmarz iteration;
this package provides the solvers (plain, momentum, and the classical
baselines), the linear-size pair-sampling preprocessor, and a spectral
engine that computes every closed-form convergence constant so predictions
can be checked against measured runs.
"""

from .decomp import (
    ConvergenceError,
    RankDeficiencyError,
    SvdResult,
    qr_householder,
    svd_jacobi,
)
from .matrices import (
    CsrMatrix,
    GramCounts,
    MatrixMarketError,
    gram_sparse,
    matvec,
    read_matrix_market,
)
from .experiments import (
    BenchInstance,
    BenchReport,
    GraphSpec,
    MethodSummary,
    TypeIISpec,
    TypeISpec,
    build_instance,
    gen_incidence,
    gen_type1,
    gen_type2,
    run_bench,
    run_bench_spec,
    run_consensus,
    validate_bench_spec,
)
from .rng import RngStream
from .solvers import (
    METHODS,
    ReferenceSolution,
    RunRecord,
    SolverConfig,
    solve,
    solve_gtrk,
    solve_mrbkvs,
    solve_rbk,
    solve_rbkvs,
    step_block_project,
    step_rk,
)
from .spectral import (
    MomentumConstants,
    SpectralProfile,
    adjugate_identity_checks,
    adjugate_identity_details,
    convergence_rate,
    esp_ratio_lower_bound_check,
    esp_ratio_margin,
    expectation_kernel,
    expected_pinv_gram_bruteforce,
    expected_projector_bruteforce,
    momentum_constants,
    momentum_step_cap,
    momentum_window,
    spectral_profile,
)
from .volume import (
    EnumSampler,
    VsPreprocS2,
    content_hash,
    load_tables,
    pair_from_uniforms,
    save_tables,
    vs_enumerate,
    vs_preprocess_s2,
    vs_prob_s2_exact,
    vs_sample_s2,
)

__version__ = "1.0.0"

__all__ = [
    "BenchInstance",
    "BenchReport",
    "ConvergenceError",
    "CsrMatrix",
    "EnumSampler",
    "GramCounts",
    "GraphSpec",
    "METHODS",
    "MatrixMarketError",
    "MethodSummary",
    "MomentumConstants",
    "RankDeficiencyError",
    "ReferenceSolution",
    "RngStream",
    "RunRecord",
    "SolverConfig",
    "SpectralProfile",
    "SvdResult",
    "TypeIISpec",
    "TypeISpec",
    "VsPreprocS2",
    "build_instance",
    "gen_incidence",
    "gen_type1",
    "gen_type2",
    "run_bench",
    "run_bench_spec",
    "run_consensus",
    "solve",
    "solve_gtrk",
    "solve_mrbkvs",
    "solve_rbk",
    "solve_rbkvs",
    "step_block_project",
    "step_rk",
    "validate_bench_spec",
    "adjugate_identity_checks",
    "adjugate_identity_details",
    "content_hash",
    "convergence_rate",
    "esp_ratio_lower_bound_check",
    "esp_ratio_margin",
    "expectation_kernel",
    "expected_pinv_gram_bruteforce",
    "expected_projector_bruteforce",
    "gram_sparse",
    "load_tables",
    "matvec",
    "momentum_constants",
    "momentum_step_cap",
    "momentum_window",
    "pair_from_uniforms",
    "qr_householder",
    "read_matrix_market",
    "save_tables",
    "spectral_profile",
    "svd_jacobi",
    "vs_enumerate",
    "vs_preprocess_s2",
    "vs_prob_s2_exact",
    "vs_sample_s2",
    "__version__",
]
