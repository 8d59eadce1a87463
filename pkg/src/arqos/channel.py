"""Per-slot OFDM channel states, rates and simulated packet service times.

Units: power in W, bandwidth in Hz, rates in bit/s, slot length in ms.
Everything is linear internally; dB values are converted only by
:meth:`ChannelParams.from_db`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

__all__ = [
    "ChannelParams",
    "SlotChannel",
    "ServiceCapExceeded",
    "pathloss_gain",
    "sample_slot",
    "sample_slots",
    "slot_stream",
    "slot_rate",
    "slot_rates",
    "simulate_service_time",
]


class ServiceCapExceeded(RuntimeError):
    """A packet could not be delivered within the configured slot cap."""


def pathloss_gain(distance_m: float = 100.0) -> float:
    """Large-scale gain ``alpha`` for the loss ``35.3 + 37.6 log10(d)`` dB."""
    return 10.0 ** (-(35.3 + 37.6 * np.log10(distance_m)) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    n_antennas: int
    alpha: float
    w0: float
    n0: float
    p_interf: float
    rho_i2: float
    n_rb: int
    slot_len: float = 1.0

    def __post_init__(self):
        if self.n_antennas < 1:
            raise ValueError("n_antennas must be >= 1")
        if not (self.alpha > 0 and self.w0 > 0 and self.n0 > 0):
            raise ValueError("alpha, w0 and n0 must be positive")
        if self.rho_i2 < 0:
            raise ValueError("rho_i2 must be nonnegative")
        if not 0.0 <= self.p_interf <= 1.0:
            raise ValueError("p_interf must lie in [0, 1]")
        if self.n_rb < 1:
            raise ValueError("n_rb must be >= 1")
        if not self.slot_len > 0:
            raise ValueError("slot_len must be positive")

    @classmethod
    def from_db(
        cls,
        n_rb: int,
        inr_db: float,
        n_antennas: int = 8,
        pathloss_db: float | None = None,
        rb_bandwidth_hz: float = 180e3,
        noise_psd_dbm_hz: float = -173.0,
        slot_ms: float = 1.0,
        interference_prob: float = 0.5,
    ) -> "ChannelParams":
        """Build from dB-domain settings (path loss as a positive loss figure)."""
        alpha = pathloss_gain() if pathloss_db is None else 10.0 ** (-pathloss_db / 10.0)
        n0 = 10.0 ** ((noise_psd_dbm_hz - 30.0) / 10.0)
        noise = rb_bandwidth_hz * n0
        return cls(
            n_antennas=n_antennas,
            alpha=alpha,
            w0=rb_bandwidth_hz,
            n0=n0,
            p_interf=interference_prob,
            rho_i2=noise * 10.0 ** (inr_db / 10.0),
            n_rb=n_rb,
            slot_len=slot_ms,
        )

    @property
    def noise_power(self) -> float:
        return self.w0 * self.n0

    @property
    def slot_seconds(self) -> float:
        return self.slot_len * 1e-3

    @property
    def gamma_ref(self) -> float:
        """Mean unit-power SINR of an interference-free RB."""
        return self.alpha * self.n_antennas / self.noise_power

    def with_inr(self, inr_db: float) -> "ChannelParams":
        return replace(self, rho_i2=self.noise_power * 10.0 ** (inr_db / 10.0))


@dataclass(frozen=True)
class SlotChannel:
    gamma: np.ndarray
    interfered: bool


def sample_slots(params: ChannelParams, rng: np.random.Generator, n: int):
    """Draw ``n`` i.i.d. slots.

    Returns ``(gamma, interfered)`` with shapes ``(n, n_rb)`` and ``(n,)``.
    The small-scale gain of an RB is ``||h||^2`` for ``h`` with ``n_antennas``
    i.i.d. unit circular complex Gaussian entries, i.e. Gamma(n_antennas, 1).
    """
    interfered = rng.random(n) < params.p_interf
    g = rng.gamma(params.n_antennas, 1.0, size=(n, params.n_rb))
    denom = params.noise_power + np.where(interfered, params.rho_i2, 0.0)
    gamma = params.alpha * g / denom[:, None]
    return gamma, interfered


def sample_slot(params: ChannelParams, rng: np.random.Generator) -> SlotChannel:
    gamma, interfered = sample_slots(params, rng, 1)
    return SlotChannel(gamma=gamma[0], interfered=bool(interfered[0]))


def slot_stream(params: ChannelParams, rng: np.random.Generator, chunk: int = 256) -> Iterator[SlotChannel]:
    """Endless iterator of independent slots."""
    while True:
        gamma, interfered = sample_slots(params, rng, chunk)
        for g, i in zip(gamma, interfered):
            yield SlotChannel(gamma=g, interfered=bool(i))


def slot_rate(power, chan, w0: float) -> float:
    """Sum rate ``w0 * sum(log2(1 + p_i * gamma_i))`` of one slot in bit/s.

    ``chan`` is a :class:`SlotChannel` or a bare SINR vector.
    """
    gamma = chan.gamma if isinstance(chan, SlotChannel) else np.asarray(chan, float)
    power = np.asarray(power, float)
    if power.shape != gamma.shape:
        raise ValueError(f"power shape {power.shape} does not match gamma shape {gamma.shape}")
    if np.any(power < 0):
        raise ValueError("power entries must be nonnegative")
    return float(w0 * np.sum(np.log2(1.0 + power * gamma)))


def slot_rates(power: np.ndarray, gamma: np.ndarray, w0: float) -> np.ndarray:
    """Row-wise :func:`slot_rate` for batches of shape ``(n, n_rb)``."""
    return w0 * np.log1p(power * gamma).sum(axis=-1) / np.log(2.0)


def simulate_service_time(
    policy: Callable[[np.ndarray], np.ndarray],
    packet_bits: float,
    slots: Iterator[SlotChannel],
    params: ChannelParams,
    max_slots: int = 200,
) -> int:
    """Number of slots needed to deliver ``packet_bits``.

    Consumes exactly that many slots from ``slots``; bits left over in the
    last slot are not carried to the next packet.
    """
    if not packet_bits > 0:
        raise ValueError("packet_bits must be positive")
    delivered = 0.0
    for k in range(1, max_slots + 1):
        chan = next(slots)
        delivered += slot_rate(policy(chan.gamma), chan, params.w0) * params.slot_len / 1000.0
        if delivered >= packet_bits:
            return k
    raise ServiceCapExceeded(f"packet of {packet_bits} bits not delivered within {max_slots} slots")
