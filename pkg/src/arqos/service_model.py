"""Gaussian approximation of the per-slot rate and the induced service-time law.

Per-slot rates are modelled as ``N(mu_i, var_i)`` in interfered slots and
``N(mu_u, var_u)`` otherwise. Over ``k`` slots with ``i`` interfered ones the
cumulative rate is Gaussian with mean ``i mu_i + (k-i) mu_u`` and variance
``i var_i + (k-i) var_u``; mixing over ``i ~ Binomial(k, p_interf)`` gives the
probability that a packet of ``m_bits`` is delivered within ``k`` slots.

Rates are in bit/s and the slot length ``t_f`` in ms, so a packet of
``m_bits`` needs a cumulative rate of ``m_bits / (t_f / 1000)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr
from scipy.stats import binom

__all__ = [
    "RateStats",
    "ServiceTimeDist",
    "estimate_stats",
    "service_cdf",
    "service_survival",
    "service_pmf",
    "service_mgf",
    "empirical_mgf",
]


@dataclass(frozen=True)
class RateStats:
    mu_i: float
    var_i: float
    mu_u: float
    var_u: float
    n_i: int
    n_u: int

    def __post_init__(self):
        if self.var_i < 0 or self.var_u < 0:
            raise ValueError("variances must be nonnegative")


@dataclass(frozen=True)
class ServiceTimeDist:
    """Probabilities of a service time of ``k * slot_len`` ms for ``k = 1..k_max``."""

    pmf: np.ndarray
    slot_len: float

    @property
    def k_max(self) -> int:
        return int(self.pmf.size)

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.k_max + 1)

    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf) * self.slot_len)

    def to_csv(self, path) -> None:
        np.savetxt(
            path,
            np.column_stack([self.support, self.pmf]),
            delimiter=",",
            header="k,probability",
            comments="",
            fmt=["%d", "%.17g"],
        )


def estimate_stats(rates, interfered) -> RateStats:
    """Per-class sample mean and population (1/n) variance of slot rates."""
    rates = np.asarray(rates, dtype=float)
    interfered = np.asarray(interfered, dtype=bool)
    r_i, r_u = rates[interfered], rates[~interfered]
    for name, r in (("interfered", r_i), ("interference-free", r_u)):
        if r.size < 2:
            raise ValueError(f"need at least 2 {name} slots, got {r.size}")
    return RateStats(
        mu_i=float(r_i.mean()),
        var_i=float(r_i.var()),
        mu_u=float(r_u.mean()),
        var_u=float(r_u.var()),
        n_i=int(r_i.size),
        n_u=int(r_u.size),
    )


def _required_rate(m_bits: float, t_f: float) -> float:
    return m_bits * 1000.0 / t_f


def _class_moments(stats: RateStats, k: int):
    i = np.arange(k + 1)
    mean = i * stats.mu_i + (k - i) * stats.mu_u
    std = np.sqrt(i * stats.var_i + (k - i) * stats.var_u)
    return i, mean, std


def service_survival(stats: RateStats, p_interf: float, m_bits: float, k: int, t_f: float) -> float:
    """``P(delta > k t_f)``: the packet is not yet delivered after ``k`` slots.

    Evaluated directly rather than as ``1 - cdf`` so deep tails keep their
    relative precision. ``k = 0`` gives one.
    """
    if k == 0:
        return 1.0
    need = _required_rate(m_bits, t_f)
    i, mean, std = _class_moments(stats, k)
    weights = binom.pmf(i, k, p_interf)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (need - mean) / std
    # zero spread: deterministic cumulative rate, delivered iff mean >= need
    undelivered = np.where(std > 0, ndtr(z), (mean < need).astype(float))
    return float(min(1.0, max(0.0, np.dot(weights, undelivered))))


def service_cdf(stats: RateStats, p_interf: float, m_bits: float, k: int, t_f: float) -> float:
    """``P(delta <= k t_f)``, the probability of delivery within ``k`` slots."""
    if k < 1:
        raise ValueError("k must be >= 1")
    need = _required_rate(m_bits, t_f)
    i, mean, std = _class_moments(stats, k)
    weights = binom.pmf(i, k, p_interf)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (need - mean) / std
    delivered = np.where(std > 0, ndtr(-z), (mean >= need).astype(float))
    return float(min(1.0, max(0.0, np.dot(weights, delivered))))


def service_pmf(
    stats: RateStats,
    p_interf: float,
    m_bits: float,
    t_f: float,
    tol: float = 1e-9,
    k_cap: int = 1000,
) -> ServiceTimeDist:
    """Service-time PMF from CDF differences, truncated once ``1 - cdf < tol``.

    Negative differences from rounding are clamped to zero without
    renormalizing.
    """
    surv = [1.0]
    k = 0
    while surv[-1] >= tol:
        k += 1
        if k > k_cap:
            raise ValueError(
                f"service time exceeds {k_cap} slots with probability {surv[-1]:.3g}; "
                "rate too low for this packet size"
            )
        surv.append(service_survival(stats, p_interf, m_bits, k, t_f))
    surv = np.array(surv)
    pmf = np.maximum(surv[:-1] - surv[1:], 0.0)
    return ServiceTimeDist(pmf=pmf, slot_len=t_f)


def service_mgf(dist: ServiceTimeDist, theta: float) -> float:
    """``sum_k pmf(k) exp(theta k t_f)``."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    expo = theta * dist.support * dist.slot_len
    if expo[-1] > 500:
        pos = dist.pmf > 0
        return float(np.exp(logsumexp(expo[pos], b=dist.pmf[pos])))
    return float(np.dot(dist.pmf, np.exp(expo)))


def empirical_mgf(service_slots, theta: float, t_f: float) -> float:
    """Sample mean of ``exp(theta k t_f)`` over simulated service times ``k``."""
    k = np.asarray(service_slots)
    vals, counts = np.unique(k, return_counts=True)
    return float(np.dot(counts, np.exp(theta * vals * t_f)) / k.size)
