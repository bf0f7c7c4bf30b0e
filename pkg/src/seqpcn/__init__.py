"""Sequential pCN-MCMC for Bayesian inversion with multi-Gaussian priors."""

from .conditional import BoxFactorCache, BoxSelection, ConditionalGaussian, box_from_center, condition, draw_box, sample_conditional
from .flow import FlowProblem, Observations, Well, kriging_posterior, log_likelihood, observe, solve_flow, synth_data
from .grid import CovarianceModel, GaussianPrior, Grid2D, build_grid, build_prior, covariance_at, sample_prior
from .kernels import Chain, KernelConfig, Sampler, run_chain
from .metrics import (
    acceptance_rate,
    combined_efficiency,
    efficiency,
    gelman_rubin,
    kl_marginal,
    metrics_report,
)
from .tuner import TunerState, adapt, objective, probe_gradient, tuner_move

__version__ = "0.1.0"
