"""Isotropic Gaussian kernel density estimates in latent space.

Densities use the fully normalised kernel ``(2 pi h^2)^(-l/2) exp(-|d|^2 / 2h^2)``
and every sum over kernels goes through a max-shifted log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KdeModel",
    "WhitenTransform",
    "WhiteningError",
    "log_density",
    "log_density_batch",
    "mean_log_density",
    "entropy_loo",
    "fit_whiten",
    "pairwise_sq_dists",
]

LOG_2PI = math.log(2.0 * math.pi)
WHITEN_JITTER = 1e-8
_CHUNK = 1024


class WhiteningError(np.linalg.LinAlgError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"sample covariance is singular even after {WHITEN_JITTER:g} jitter "
            f"(smallest eigenvalue {min_eigenvalue:.3e})")


@dataclass(frozen=True)
class KdeModel:
    """Kernel centres ``samples`` (n x l) with a shared bandwidth."""

    samples: np.ndarray
    bandwidth: float

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] == 0 or s.shape[1] == 0:
            raise ValueError(f"samples must be a non-empty n x l matrix, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain non-finite values")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def log_norm(self) -> float:
        """log of (1/n) (2 pi h^2)^(-l/2)."""
        h, l = self.bandwidth, self.dim
        return -math.log(self.n) - 0.5 * l * (LOG_2PI + 2.0 * math.log(h))


def _lse_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return np.log(np.exp(a - m[:, None]).sum(axis=1)) + m


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``a`` and rows of ``b``.

    Both sets are centred on the mean of ``b`` first so the expansion
    ``|a|^2 + |b|^2 - 2 a.b`` does not lose precision far from the origin.
    """
    c = b.mean(axis=0)
    a = a - c
    b = b - c
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def log_density(model: KdeModel, z) -> float:
    """log q(z) for a single point."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.dim,):
        raise ValueError(f"query has shape {z.shape}, expected ({model.dim},)")
    diff = model.samples - z
    d2 = np.einsum("ij,ij->i", diff, diff)
    a = -d2 / (2.0 * model.bandwidth ** 2)
    m = a.max()
    return float(math.log(np.exp(a - m).sum()) + m + model.log_norm())


def log_density_batch(model: KdeModel, queries) -> np.ndarray:
    """log q(z) for every row of ``queries``, evaluated in fixed-size row chunks."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.dim:
        raise ValueError(f"queries have shape {q.shape}, expected (k, {model.dim})")
    out = np.empty(q.shape[0])
    inv = 1.0 / (2.0 * model.bandwidth ** 2)
    for start in range(0, q.shape[0], _CHUNK):
        d2 = pairwise_sq_dists(q[start:start + _CHUNK], model.samples)
        out[start:start + _CHUNK] = _lse_rows(-d2 * inv)
    return out + model.log_norm()


def mean_log_density(model: KdeModel, queries) -> float:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] == 0:
        raise ValueError("mean_log_density needs at least one query row")
    return float(np.mean(log_density_batch(model, q)))


def entropy_loo(samples, h: float, method: str = "loo") -> float:
    """Kernel estimate of differential entropy, minus the ``(l/2) log 2 pi`` constant.

    ``method="loo"`` scores each point against the KDE of all other points.
    ``method="split"`` uses the first half of the rows as kernel centres and
    scores the second half.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be an n x l matrix, got shape {x.shape}")
    n, l = x.shape
    if n < 2:
        raise ValueError("entropy estimate needs at least two samples")
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")

    inv = 1.0 / (2.0 * h * h)
    if method == "split":
        half = (n + 1) // 2
        model = KdeModel(x[:half], h)
        logq = log_density_batch(model, x[half:])
    elif method == "loo":
        logq = np.empty(n)
        for start in range(0, n, _CHUNK):
            stop = min(start + _CHUNK, n)
            a = -pairwise_sq_dists(x[start:stop], x) * inv
            a[np.arange(stop - start), np.arange(start, stop)] = -np.inf
            logq[start:stop] = _lse_rows(a)
        logq += -math.log(n - 1) - 0.5 * l * (LOG_2PI + 2.0 * math.log(h))
    else:
        raise ValueError(f"unknown entropy method {method!r}")
    return float(-np.mean(logq) - 0.5 * l * LOG_2PI)


@dataclass(frozen=True)
class WhitenTransform:
    mean: np.ndarray
    transform: np.ndarray

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.transform.T


def fit_whiten(samples) -> WhitenTransform:
    """Mean and inverse Cholesky factor of the sample covariance (ddof=1).

    A jitter of ``1e-8 I`` is added only if the plain factorisation fails.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be an n x l matrix, got shape {x.shape}")
    n, l = x.shape
    if n <= l:
        raise ValueError(f"whitening needs more samples than dimensions (n={n}, l={l})")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, ddof=1).reshape(l, l)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(cov + WHITEN_JITTER * np.eye(l))
        except np.linalg.LinAlgError:
            raise WhiteningError(float(np.linalg.eigvalsh(cov)[0])) from None
    inv = np.linalg.solve(chol, np.eye(l))
    # keep the factor exactly lower triangular
    return WhitenTransform(mean=mean, transform=np.tril(inv))
