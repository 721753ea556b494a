"""Contrastive learning of Langevin transition kernels, with numerical checks of its guarantees."""

__version__ = "0.1.0"

from .classifier import (
    ClassifierModel,
    ConstantClassifier,
    TrainConfig,
    TrainResult,
    forward,
    grad_loss,
    init_model,
    l2_loss,
    oracle_classifier,
    train,
)
from .config import ExperimentConfig, load_config, parse_config
from .contrastive_data import ContrastSpec, PairDataset, build_pairs, compute_cq, sample_iid_pairs
from .diffusion import (
    OUKernel,
    PotentialSpec,
    Trajectory,
    check_assumptions,
    expected_norm_b,
    simulate_trajectory,
    stationary_density,
    transition_density_ou,
)
from .errors import (
    ConstructionError,
    ContrastiveKernelError,
    DegenerateContrastError,
    InvalidConfigError,
    InvalidInputError,
    SupportViolationError,
    TrainingDivergedError,
    UnsupportedError,
)
from .kernel_extraction import KernelEstimate, extract_p_eta, normalization_check
from .mixing import (
    FiniteChain,
    GeneralizationConfig,
    beta_pair_exact,
    beta_point,
    empirical_rademacher,
    generalization_gap_measure,
    mixing_bound_check,
    mohri_bound,
    select_mu,
    tv_distance,
)
from .theory_metrics import (
    QuadratureSpec,
    curvature_check,
    delta_min_max,
    epsilon_star,
    excess_risk,
    kernel_bounds_fit,
    kl_to_truth,
    l1_to_truth,
    make_perturbed_kernel,
    t2_term,
    theorem_kl_check,
    theorem_orig_check,
)
