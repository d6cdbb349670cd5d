"""Autoencoders whose aggregate posterior is a Gaussian KDE matched to a N(0, I) prior."""

from .bandwidth import bandwidth_for, bias_correct, corrected_bandwidth, estimate_h_opt
from .diagnostics import generate, latent_diagnostics, sample_prior_biased
from .kde import KdeModel, entropy_loo, fit_whiten, log_density, log_density_batch
from .trainer import TrainConfig, avae_loss, compute_beta, train

__version__ = "0.1.0"

__all__ = [
    "KdeModel", "TrainConfig", "avae_loss", "bandwidth_for", "bias_correct",
    "compute_beta", "corrected_bandwidth", "entropy_loo", "estimate_h_opt", "fit_whiten",
    "generate", "latent_diagnostics", "log_density", "log_density_batch",
    "sample_prior_biased", "train",
]
