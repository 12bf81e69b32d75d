"""Design and simulation toolkit for cluster randomized trials with
zero-inflated Poisson outcomes: closed-form cluster counts, correlated
trial simulation, GEE fitting with sandwich and Jackknife variances, and
Monte Carlo operating-characteristic studies."""

from .design import (
    ArmProfile,
    ClusterSizeModel,
    DesignInputs,
    EffectDecomposition,
    build_design,
    decompose_effect,
    infer_p1_from_observed,
    marginal_variance,
    p2_from_q,
    pairwise_covariance_factor,
    zero_probability,
)
from .errors import (
    ConfigError,
    DomainError,
    EstimationError,
    StudyError,
    ZipCrtError,
)
from .gee import (
    BetaFit,
    ESFit,
    GeeFit,
    WaldTest,
    conditional_zero_mean,
    fit_alpha_es,
    fit_beta,
    fit_zip,
    jackknife_variance,
    sandwich_variance,
    wald_test,
)
from .mc import (
    StudyConfig,
    StudyReport,
    TableReport,
    estimate_poisson_icc,
    reference_design,
    replicate_seed,
    reproduce_tables,
    run_power_study,
)
from .power import (
    QSweepEntry,
    SampleSizeResult,
    design_variance,
    q_sweep,
    sample_size_normal,
    sample_size_t,
)
from .simulate import (
    ClusterRecord,
    TrialDataset,
    generate_trial,
    read_dataset,
    sample_cluster_size,
    sample_correlated_poisson,
    sample_structural_zeros,
    substream,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "ArmProfile",
    "BetaFit",
    "ClusterRecord",
    "ClusterSizeModel",
    "ConfigError",
    "DesignInputs",
    "DomainError",
    "ESFit",
    "EffectDecomposition",
    "EstimationError",
    "GeeFit",
    "QSweepEntry",
    "SampleSizeResult",
    "StudyConfig",
    "StudyError",
    "StudyReport",
    "TableReport",
    "TrialDataset",
    "WaldTest",
    "ZipCrtError",
    "build_design",
    "conditional_zero_mean",
    "decompose_effect",
    "design_variance",
    "estimate_poisson_icc",
    "fit_alpha_es",
    "fit_beta",
    "fit_zip",
    "generate_trial",
    "infer_p1_from_observed",
    "jackknife_variance",
    "marginal_variance",
    "p2_from_q",
    "pairwise_covariance_factor",
    "q_sweep",
    "read_dataset",
    "reference_design",
    "replicate_seed",
    "reproduce_tables",
    "run_power_study",
    "sample_cluster_size",
    "sample_correlated_poisson",
    "sample_size_normal",
    "sample_size_t",
    "sample_structural_zeros",
    "sandwich_variance",
    "substream",
    "wald_test",
    "write_dataset",
    "zero_probability",
]
