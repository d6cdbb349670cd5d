"""Latent-space diagnostics and sampling from a trained decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .bandwidth import corrected_bandwidth
from .kde import entropy_loo, fit_whiten
from .nets import MlpParams, decode

__all__ = [
    "LatentReport",
    "latent_diagnostics",
    "collapsed_axes",
    "sample_prior_biased",
    "generate",
]

COLLAPSE_TAU = 0.01


@dataclass
class LatentReport:
    n: int
    l: int
    means: list[float]
    variances: list[float]
    max_abs_corr: float
    entropy: float
    entropy_bandwidth: float
    target_variance: float
    variance_ratio: list[float]
    whitened_cov_deviation: float
    collapsed_axes: list[int]
    collapse_tau: float

    def to_json(self) -> dict:
        return asdict(self)


def collapsed_axes(latents, tau: float = COLLAPSE_TAU) -> list[int]:
    """Axes whose sample variance is below ``tau``."""
    z = np.asarray(latents, dtype=np.float64)
    return [int(i) for i in np.flatnonzero(z.var(axis=0, ddof=1) < tau)]


def latent_diagnostics(latents, h_corr: float, collapse_tau: float = COLLAPSE_TAU,
                       entropy_bandwidth: float | None = None) -> LatentReport:
    """Moments, correlations, collapsed axes and whitened entropy of latent codes.

    The entropy is the leave-one-out KDE estimate on the whitened codes, using
    the corrected bandwidth for (l, n) unless ``entropy_bandwidth`` is given.
    Collapsed axes are dropped before whitening; with none left the entropy is
    reported as NaN.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[1] < 1:
        raise ValueError(f"latents must be an n x l matrix with n >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latents contain non-finite values")
    if not 0 <= h_corr < 1:
        raise ValueError(f"h_corr must lie in [0, 1), got {h_corr}")
    if not collapse_tau > 0:
        raise ValueError(f"collapse_tau must be positive, got {collapse_tau}")
    n, l = z.shape
    var = z.var(axis=0, ddof=1)
    collapsed = collapsed_axes(z, collapse_tau)
    live = [i for i in range(l) if i not in collapsed]

    max_corr = 0.0
    if len(live) > 1:
        c = np.corrcoef(z[:, live], rowvar=False)
        max_corr = float(np.max(np.abs(c - np.diag(np.diag(c)))))

    entropy = math.nan
    bw = math.nan
    dev = math.nan
    if live and n > len(live):
        zl = z[:, live]
        w = fit_whiten(zl).apply(zl)
        dev = float(np.max(np.abs(np.cov(w, rowvar=False, ddof=1).reshape(len(live), -1)
                                  - np.eye(len(live)))))
        bw = entropy_bandwidth if entropy_bandwidth is not None \
            else corrected_bandwidth(len(live), n)
        entropy = entropy_loo(w, bw)

    target = 1.0 - h_corr * h_corr
    return LatentReport(n=n, l=l, means=z.mean(axis=0).tolist(), variances=var.tolist(),
                        max_abs_corr=max_corr, entropy=float(entropy),
                        entropy_bandwidth=float(bw), target_variance=target,
                        variance_ratio=(var / target).tolist(),
                        whitened_cov_deviation=dev, collapsed_axes=collapsed,
                        collapse_tau=collapse_tau)


def sample_prior_biased(n: int, l: int, h: float, seed: int) -> np.ndarray:
    """``n`` draws from N(0, (1 - h^2) I), the converged aggregate posterior."""
    if n < 0 or l < 1:
        raise ValueError(f"need n >= 0 and l >= 1 (n={n}, l={l})")
    if not 0 <= h <= 1:
        raise ValueError(f"h must lie in [0, 1], got {h}")
    rng = np.random.default_rng(seed)
    return math.sqrt(max(0.0, 1.0 - h * h)) * rng.standard_normal((n, l))


def generate(decoder: MlpParams, h_corr: float, n: int, seed: int) -> np.ndarray:
    """Decode ``n`` latents drawn from the biased prior; an empty matrix for n = 0."""
    z = sample_prior_biased(n, decoder.d_in, h_corr, seed)
    if n == 0:
        return np.zeros((0, decoder.d_out))
    return decode(decoder, z)
