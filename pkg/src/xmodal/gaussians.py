"""Exact diagonal-Gaussian latent math: KL divergence, sampling, log-density.

Distributions are parameterized by mean and log-variance. Log-variance keeps
the variance positive without any projection step, and is clamped to
[LOG_VAR_MIN, LOG_VAR_MAX] at construction so KL terms cannot overflow.
All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian over a D-dimensional latent with diagonal covariance.

    Attributes:
        mean: (D,) array.
        log_var: (D,) array, clamped to [LOG_VAR_MIN, LOG_VAR_MAX].
    """

    mean: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        log_var = np.atleast_1d(np.asarray(self.log_var, dtype=np.float64))
        if mean.ndim != 1 or log_var.ndim != 1:
            raise ValueError("mean and log_var must be 1-D vectors")
        if mean.shape != log_var.shape:
            raise ValueError(
                f"mean has dimension {mean.shape[0]} but log_var has "
                f"dimension {log_var.shape[0]}"
            )
        if mean.shape[0] < 1:
            raise ValueError("latent dimension must be >= 1")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(log_var)):
            raise ValueError("mean and log_var entries must be finite")
        log_var = np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)

    @classmethod
    def standard(cls, dim: int) -> "DiagonalGaussian":
        """N(0, I) in `dim` dimensions."""
        return cls(np.zeros(dim), np.zeros(dim))


def kl_divergence(q: DiagonalGaussian, p: DiagonalGaussian) -> float:
    """KL(q || p) between two diagonal Gaussians, in nats.

    Sum over dimensions of
        0.5*(log var_p - log var_q) + (var_q + (mu_q - mu_p)^2)/(2 var_p) - 0.5

    Always >= 0, and 0 exactly when q and p coincide.
    """
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: q has D={q.dim}, p has D={p.dim}")
    return float(
        np.sum(
            0.5 * (p.log_var - q.log_var)
            + (q.var + np.square(q.mean - p.mean)) / (2.0 * p.var)
            - 0.5
        )
    )


def reparameterized_sample(g: DiagonalGaussian, noise: np.ndarray) -> np.ndarray:
    """Draw mean + std * noise, with externally supplied standard-normal noise.

    Because the noise enters as data, the sample is differentiable with
    respect to mean and log_var.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != g.mean.shape:
        raise ValueError(
            f"noise has shape {noise.shape} but distribution has dimension {g.dim}"
        )
    return g.mean + g.std * noise


def log_density(x: np.ndarray, g: DiagonalGaussian) -> float:
    """Exact log pdf of the diagonal Gaussian at x."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != g.mean.shape:
        raise ValueError(
            f"x has shape {x.shape} but distribution has dimension {g.dim}"
        )
    return float(
        -0.5 * np.sum(_LOG_2PI + g.log_var + np.square(x - g.mean) / g.var)
    )
