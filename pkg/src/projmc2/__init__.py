"""Bayesian spatial factor models with NNGP factor priors, sampled by
projected MCMC or blocked Gibbs."""

from .diagnostics import (align_signs, effective_sample_size, ess_report,
                          factor_recovery_metrics, spherical_summary)
from .linalg import LinearOperator, lsmr, mgs_thin_qr, randomized_svd
from .model import (Dataset, MatrixNormalPrior, ModelState, PriorSpec, conditional_mniw_params,
                    project_g, sample_F, sample_gamma, sample_sigma2)
from .nngp import NNGPFactor, build_nngp_factor, nngp_factors
from .sampler import (ChainStore, RunConfig, post_center, run_blocked_gibbs, run_chain,
                      run_projmc2)
from .simgen import SimSpec, Truth, default_spec, simulate
from .spatial import Kernel, LocationSet, maximin_order, predecessor_neighbors

__version__ = "0.1.0"

__all__ = [
    "ChainStore", "Dataset", "Kernel", "LinearOperator", "LocationSet", "MatrixNormalPrior",
    "ModelState", "NNGPFactor", "PriorSpec", "RunConfig", "SimSpec", "Truth",
    "align_signs", "build_nngp_factor", "conditional_mniw_params", "default_spec",
    "effective_sample_size", "ess_report", "factor_recovery_metrics", "lsmr", "maximin_order",
    "mgs_thin_qr", "nngp_factors", "post_center", "predecessor_neighbors", "project_g",
    "randomized_svd", "run_blocked_gibbs", "run_chain", "run_projmc2", "sample_F",
    "sample_gamma", "sample_sigma2", "simulate", "spherical_summary",
]
