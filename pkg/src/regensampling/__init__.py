"""Regenerative rejection sampling with renewal-theory oracles, coupling
experiments, regenerative ratio estimators and a probit case study."""

__version__ = "0.1.0"

from .dists import (ExponentialProposal, ProductLaplace, Proposal, RandomStream, TargetDensity,
                    TruncatedProposal, gamma_target, laplace_draw, synthetic_proposal,
                    synthetic_target, truncated_normal_lower, truncated_sample)
from .estimators import (RatioEstimate, bias_bound, bias_sweep, confidence_interval, estimate,
                         ratio_drop_last, ratio_fixed_cycles, ratio_fixed_time, tavc_estimate)
from .samplers import (ChainTrace, CycleMoments, RegenPath, acf, cycle_moments, imh_chain,
                       rejection_sample, rrs_path, rrs_subsampled, rrs_terminal, rwm_chain,
                       threshold_select)

__all__ = [
    "ExponentialProposal", "ProductLaplace", "Proposal", "RandomStream", "TargetDensity",
    "TruncatedProposal", "gamma_target", "laplace_draw", "synthetic_proposal",
    "synthetic_target", "truncated_normal_lower", "truncated_sample",
    "RatioEstimate", "bias_bound", "bias_sweep", "confidence_interval", "estimate",
    "ratio_drop_last", "ratio_fixed_cycles", "ratio_fixed_time", "tavc_estimate",
    "ChainTrace", "CycleMoments", "RegenPath", "acf", "cycle_moments", "imh_chain",
    "rejection_sample", "rrs_path", "rrs_subsampled", "rrs_terminal", "rwm_chain",
    "threshold_select",
]
