"""Truncated-Gaussian frame arrival process.

All times are in milliseconds. The inter-arrival time of consecutive
frames is a normal variable with mean ``mu`` and standard deviation
``sigma`` truncated to the open interval ``(b1, b2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr
from scipy.stats import truncnorm

__all__ = [
    "ArrivalParams",
    "sample_interarrival",
    "neg_mgf",
    "log_neg_mgf",
    "neg_mgf_quadrature",
    "generate_arrivals",
]


@dataclass(frozen=True)
class ArrivalParams:
    """Parameters of the truncated-Gaussian inter-arrival law (ms)."""

    mu: float
    sigma: float
    b1: float
    b2: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.b1 > 0:
            raise ValueError(f"b1 must be positive, got {self.b1}")
        if not self.b1 < self.mu < self.b2:
            raise ValueError(
                f"need b1 < mu < b2, got b1={self.b1}, mu={self.mu}, b2={self.b2}"
            )

    @classmethod
    def from_fps(cls, fps: float, sigma: float = 2.0, half_width: float = 5.0) -> "ArrivalParams":
        """Frame-rate shorthand: ``mu = 1000/fps`` and ``b = mu -/+ half_width``."""
        mu = 1000.0 / fps
        return cls(mu=mu, sigma=sigma, b1=mu - half_width, b2=mu + half_width)

    @property
    def frame_rate(self) -> float:
        return 1000.0 / self.mu

    @property
    def standardized_bounds(self) -> tuple[float, float]:
        return (self.b1 - self.mu) / self.sigma, (self.b2 - self.mu) / self.sigma

    def mean(self) -> float:
        """Analytic mean of the truncated distribution."""
        return float(truncnorm.mean(*self.standardized_bounds, loc=self.mu, scale=self.sigma))

    def std(self) -> float:
        return float(truncnorm.std(*self.standardized_bounds, loc=self.mu, scale=self.sigma))

    def pdf(self, t):
        return truncnorm.pdf(t, *self.standardized_bounds, loc=self.mu, scale=self.sigma)


def sample_interarrival(params: ArrivalParams, rng: np.random.Generator, size=None):
    """Draw inter-arrival times by inverting the truncated-normal CDF.

    Every returned value lies strictly inside ``(b1, b2)``.
    """
    a, b = params.standardized_bounds
    u = rng.random(size)
    t = truncnorm.ppf(u, a, b, loc=params.mu, scale=params.sigma)
    # ppf can land on a bound when u rounds to 0 or 1
    t = np.clip(t, np.nextafter(params.b1, np.inf), np.nextafter(params.b2, -np.inf))
    return float(t) if size is None else t


def _log_ndtr_diff(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for ``lo < hi`` without cancellation in the tails."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    upper = lo > 0
    # upper tail: Phi(hi) - Phi(lo) = Phi(-lo) - Phi(-hi)
    big = np.where(upper, log_ndtr(-lo), log_ndtr(hi))
    small = np.where(upper, log_ndtr(-hi), log_ndtr(lo))
    return big + np.log1p(-np.exp(small - big))


def log_neg_mgf(params: ArrivalParams, theta):
    """``log E[exp(-theta * tau)]`` in closed form; vectorized over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("theta must be nonnegative")
    mu, s = params.mu, params.sigma
    shift = theta * s * s
    log_num = _log_ndtr_diff((params.b1 - mu + shift) / s, (params.b2 - mu + shift) / s)
    log_den = _log_ndtr_diff((params.b1 - mu) / s, (params.b2 - mu) / s)
    out = -theta * mu + 0.5 * shift * theta + log_num - log_den
    return float(out) if out.ndim == 0 else out


def neg_mgf(params: ArrivalParams, theta):
    """``E[exp(-theta * tau)]``; equals 1 at ``theta = 0`` and decreases in ``theta``."""
    return np.exp(log_neg_mgf(params, theta))


def neg_mgf_quadrature(params: ArrivalParams, theta: float) -> float:
    """Adaptive-quadrature evaluation of ``E[exp(-theta * tau)]``.

    Independent of the closed form; used to cross-check it.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    mu, s = params.mu, params.sigma
    z = ndtr((params.b2 - mu) / s) - ndtr((params.b1 - mu) / s)

    def integrand(t):
        return np.exp(-theta * t - 0.5 * ((t - mu) / s) ** 2) / (s * np.sqrt(2 * np.pi) * z)

    val, _ = integrate.quad(
        integrand, params.b1, params.b2, points=[mu], epsabs=0.0, epsrel=1e-13, limit=200
    )
    return val


def generate_arrivals(params: ArrivalParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Arrival instants of ``n`` frames, the first at time 0."""
    if n < 1:
        raise ValueError("n must be at least 1")
    out = np.zeros(n)
    if n > 1:
        np.cumsum(sample_interarrival(params, rng, n - 1), out=out[1:])
    return out
