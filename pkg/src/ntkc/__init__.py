"""Asymptotic CK/NTK spectral equivalents for deep nets on high-dimensional
mixture data, and ternary-weight quantized-activation compression that
preserves them."""

from .activations import (
    ActivationMoments,
    ActivationSpec,
    activation_moments,
    center,
    closed_form_moments_Q,
    closed_form_moments_T,
    gauss_expect,
    weak_moment,
)
from .compressor import (
    MatchTargets,
    MemoryFootprint,
    SolveResult,
    compress_network,
    invert_targets,
    memory_footprint,
    solve_sigma_Q,
    solve_sigma_T,
)
from .data import (
    Covariance,
    Dataset,
    MixtureClass,
    MixtureModel,
    MixtureStats,
    empirical_stats,
    estimate_tau0,
    load_csv,
    load_idx,
    mixture_stats,
    normalize_dataset,
    sample_gmm,
    save_csv,
    spiked_two_class_model,
)
from .errors import (
    CompressionError,
    DegenerateInputError,
    FormatError,
    InfeasibleTargetsError,
    ModelError,
    NoSolutionError,
    NtkcError,
    NumericError,
)
from .evaluate import (
    ReadoutModel,
    accuracy,
    binary_activation_baseline,
    magnitude_prune,
    stratified_split,
    train_readout,
)
from .kernels_empirical import (
    KernelMatrix,
    WeightDraw,
    exact_ck,
    exact_ntk,
    forward_representations,
    load_kernel_bin,
    load_matrix_csv,
    monte_carlo_ck,
    sample_weights,
    save_kernel_bin,
    save_matrix_csv,
)
from .kernels_theory import (
    LayerCoefficients,
    NetworkSpec,
    NtkCoefficients,
    WeightDist,
    assemble_equivalent_ck,
    assemble_equivalent_kprime,
    assemble_equivalent_ntk,
    center_network,
    ck_coefficients,
    coefficients_to_csv,
    coefficients_to_json_dict,
    ntk_coefficients,
)
from .spectral import SpectralReport, compare, operator_norm_diff, sym_eig

__version__ = "0.1.0"
