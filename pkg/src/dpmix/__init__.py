"""Dirichlet-process Gaussian location mixtures: density and prior
primitives, metric quadrature, sieve nets, approximation audits,
posterior sampling, and contraction-rate experiments."""

from .density import (
    DiscreteMeasure,
    IsotropicGaussianKernel,
    MixtureDensity,
    kernel_eval,
    mixture_pdf,
    mixture_sample,
    truncation_deficit,
)
from .prior import (
    BandwidthPrior,
    DPPrior,
    GaussianBaseMeasure,
    StickBreakingDraw,
    draw_prior_density,
    draw_sigma,
    draw_stick_breaking,
    stick_tail_prob,
)
from .metrics import (
    DensityFunction,
    QuadratureScheme,
    hellinger,
    kl_ball_contains,
    kl_div,
    kl_second,
    l1_distance,
)
from .sieve import (
    SieveNet,
    SieveSpec,
    build_sieve_net,
    log_covering_bound,
    prior_complement_mass,
    project_to_net,
    schedule_holder,
    schedule_supersmooth,
    sieve_membership,
)
from .approx import (
    CompactDensity,
    PartitionScheme,
    build_thickness_partition,
    dirichlet_small_ball,
    discretize,
    perturbation_bound_check,
    smooth,
    smoothing_rate_audit,
    snap_to_grid,
)
from .inference import (
    FitConfig,
    PosteriorSampleSet,
    fit,
    posterior_predictive,
    prior_reproduction_check,
)
from .experiments import (
    ExperimentConfig,
    TrueDensitySpec,
    emit_report,
    make_true_density,
    run_rate_experiment,
)

__version__ = "0.1.0"
