"""Water-filling primitives and the fixed-service-time baseline allocator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelParams, sample_slots
from .snc import InfeasibleTargetError, QosExponent

__all__ = [
    "waterfill_at_level",
    "water_level_for_rate",
    "waterfill_for_rate",
    "baseline_service_slots",
    "baseline_rate",
    "baseline_average_power",
    "PowerEstimate",
]


def waterfill_at_level(gamma, w):
    """``p_i = max(0, w - 1/gamma_i)``; broadcasts ``w`` over the last axis of ``gamma``."""
    gamma = np.asarray(gamma, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("water level must be nonnegative")
    return np.maximum(0.0, w[..., None] - 1.0 / gamma)


def water_level_for_rate(gamma, r_target, w0: float):
    """Water level whose allocation delivers exactly ``r_target`` bit/s.

    With the ``m`` strongest RBs active the rate is
    ``w0 * (m log2 w + sum log2 gamma)``, so each candidate active-set size
    gives a closed-form level; the consistent one is kept. Works on batches:
    ``gamma`` is ``(..., n_rb)`` and ``r_target`` broadcasts to ``gamma.shape[:-1]``.
    """
    gamma = np.asarray(gamma, dtype=float)
    r_target = np.broadcast_to(np.asarray(r_target, dtype=float), gamma.shape[:-1])
    if np.any(r_target < 0):
        raise ValueError("target rate must be nonnegative")
    log_g = np.sort(np.log2(gamma), axis=-1)[..., ::-1]
    m = np.arange(1, gamma.shape[-1] + 1)
    log_w = (r_target[..., None] / w0 - np.cumsum(log_g, axis=-1)) / m
    # level must exceed 1/gamma of the m-th RB and not exceed that of the (m+1)-th
    above = log_w + log_g > 0
    below = np.ones_like(above)
    below[..., :-1] = log_w[..., :-1] + log_g[..., 1:] <= 0
    m_star = np.argmax(above & below, axis=-1)
    level = np.exp2(np.take_along_axis(log_w, m_star[..., None], axis=-1)[..., 0])
    # zero rate: level at the strongest RB's floor, i.e. no power anywhere
    return np.where(r_target > 0, level, 2.0 ** (-log_g[..., 0]))


def waterfill_for_rate(gamma, r_target, w0: float):
    """Minimum-total-power allocation reaching ``r_target`` bit/s."""
    return waterfill_at_level(gamma, water_level_for_rate(gamma, r_target, w0))


def baseline_service_slots(q: QosExponent, t_f: float) -> int:
    """Largest constant service time ``k`` (slots) with ``e^{theta k t_f} <= A``."""
    x = np.log(q.a_const) / (q.theta * t_f)
    k = int(np.floor(x + 1e-9 * max(1.0, x)))
    if k < 1:
        raise InfeasibleTargetError(
            f"arrivals too fast: no constant service time of >= 1 slot satisfies the condition (ln A/(theta T_f) = {x:.4g})"
        )
    return k


def baseline_rate(m_bits: float, k_slots: int, t_f: float) -> float:
    """Per-slot rate (bit/s) that spreads ``m_bits`` evenly over ``k_slots``."""
    if k_slots < 1:
        raise ValueError("k_slots must be >= 1")
    return m_bits * 1000.0 / (k_slots * t_f)


@dataclass(frozen=True)
class PowerEstimate:
    mean: float
    se: float
    n: int


def baseline_average_power(
    chan: ChannelParams,
    m_bits: float,
    k_slots: int,
    rng: np.random.Generator,
    n_slots: int,
    chunk: int = 50_000,
) -> PowerEstimate:
    """Monte Carlo mean total slot power of the fixed-service-time baseline."""
    target = baseline_rate(m_bits, k_slots, chan.slot_len)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_slots:
        n = min(chunk, n_slots - done)
        gamma, _ = sample_slots(chan, rng, n)
        p = waterfill_for_rate(gamma, target, chan.w0).sum(axis=-1)
        total += p.sum()
        total_sq += np.dot(p, p)
        done += n
    mean = total / n_slots
    var = max(total_sq / n_slots - mean * mean, 0.0)
    return PowerEstimate(mean=float(mean), se=float(np.sqrt(var / n_slots)), n=n_slots)
