"""Robust generalised-Bayes particle filtering for state-space models.

Weighting particle filters by the exponentiated negative beta-divergence
loss instead of the likelihood makes sequential inference robust to
contaminated observations while keeping the standard algorithms (and their
convergence behaviour) intact. The package provides the robustified
bootstrap and auxiliary filters, exact Kalman/RTS baselines, trajectory
smoothing, benchmark simulators and an experiment CLI.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    DegenerateBackwardKernelError,
    DegenerateWeightsError,
    NotClosedFormError,
    NumericalError,
)
from .filters import (
    FilterOutput,
    FilterSpec,
    ParticleEnsemble,
    TransitionProposal,
    effective_sample_size,
    normalise_log_weights,
    resample,
    run_apf,
    run_bpf,
    run_generic_pf,
)
from .kalman import GaussianBelief, KalmanResult, kalman_filter, kalman_filter_model, rts_smoother
from .metrics import (
    RunMetrics,
    compute_filter_metrics,
    compute_gaussian_metrics,
    empirical_coverage,
    influence_profile,
    nmse,
    predictive_medae,
)
from .models import (
    AsymmetricGaussian,
    Gaussian,
    GaussianDensity,
    GaussianMixture,
    GeneralisedLikelihood,
    LikelihoodFamily,
    LinearGaussianTransition,
    NonlinearGaussian,
    StateSpaceModel,
    StudentT,
)
from .selection import BetaSelectionConfig, SelectionResult, predictive_loss, select_beta
from .simulators import (
    AdditiveGaussianContamination,
    AdditiveStudentTContamination,
    Dataset,
    DEMParams,
    GPRegressionConfig,
    Matern52StateSpace,
    MultiplicativeExponentialContamination,
    TANConfig,
    WienerVelocityConfig,
    build_matern52,
    contaminate,
    dem_elevation,
    draw_observations,
    oracle_mixture,
    simulate_lgssm,
    simulate_states,
    tan_observe,
)
from .smoothing import SmoothedTrajectories, ffbs

__all__ = [name for name in dir() if not name.startswith("_")]
