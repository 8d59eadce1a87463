"""Primal-dual training of the water-level policy.

The per-link problem is to minimise mean slot power subject to
``E[e^{theta* delta}] <= A`` where the service-time law comes from the
Gaussian approximation of the batch's slot rates. The policy affects the
loss only through the per-slot water levels ``w_t``, so gradients are
formed in two stages: an analytic derivative of the loss w.r.t. every
``w_t`` (hinge -> rates -> class statistics -> Gaussian tail terms ->
service-time MGF), then a vector-Jacobian product through the network.

Two loss forms share this machinery:

* ``"literal"``: ``mean_power + lam * (MGF - A)``;
* ``"normalized"`` (used for training): ``mean_power / power_scale +
  lam * log(MGF / A)``. Same feasible set and stationary points, but the
  multiplier lives on an O(1) scale whatever the link budget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import binom

from ..allocator import baseline_rate, baseline_service_slots, water_level_for_rate, waterfill_at_level
from ..channel import ChannelParams, sample_slots
from ..service_model import RateStats
from ..snc import QosExponent
from .network import DEFAULT_DIMS, PolicyParams, _forward, forward_cached, level_vjp, water_level

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "DualState",
    "Batch",
    "DivergenceError",
    "NonFiniteGradientError",
    "ConstraintTerms",
    "constraint_terms",
    "lagrangian",
    "gradients",
    "Adam",
    "train",
    "TrainResult",
    "reference_scales",
    "calibrate_level",
]

LN2 = np.log(2.0)


class DivergenceError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    theta_star: QosExponent
    m_bits: float
    t_f: float = 1.0
    p_interf: float = 0.5
    batch_size: int = 1024
    primal_lr: float = 1e-3
    dual_lr: float = 0.01
    n_iters: int = 2000
    seed: int = 0
    k_max_cap: int = 200
    lambda_cap: float = 1e6
    lambda_init: float = 0.0
    dual_clip: float | None = None
    lr_decay: float = 0.01
    n_train_slots: int = 500_000
    dims: tuple[int, ...] = DEFAULT_DIMS
    power_scale: float | None = None
    level_scale: float | None = None
    chunk: int = 1024
    cache_limit: int = 40_000_000
    dtype: str = "float64"
    calibration_margin: float | None = 0.02

    def __post_init__(self):
        for name in ("m_bits", "t_f", "batch_size", "primal_lr", "n_iters", "k_max_cap", "n_train_slots"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dual_lr < 0 or self.lambda_init < 0:
            raise ValueError("dual_lr and lambda_init must be nonnegative")
        if self.dual_clip is not None and not self.dual_clip > 0:
            raise ValueError("dual_clip must be positive")
        self.dims = tuple(self.dims)


@dataclass
class DualState:
    lam: float = 0.0

    def step(self, lr: float, constraint: float) -> None:
        self.lam = max(0.0, self.lam + lr * constraint)


@dataclass(frozen=True)
class Batch:
    gamma: np.ndarray
    interfered: np.ndarray

    def __len__(self):
        return self.gamma.shape[0]


@dataclass
class ConstraintTerms:
    """Loss ingredients of one batch and their derivatives w.r.t. the water levels."""

    mean_power: float
    mgf: float
    stats: RateStats
    d_power: np.ndarray
    d_mgf: np.ndarray
    active: np.ndarray = field(repr=False)


def _survival_table(stats: RateStats, p_interf: float, need: float, k_max: int):
    """``S(k) = P(delta > k slots)`` for ``k = 1..k_max`` and its gradient.

    Returns ``S`` of shape ``(k_max,)`` and ``dS`` of shape ``(4, k_max)``
    w.r.t. ``(mu_i, var_i, mu_u, var_u)``.
    """
    k = np.arange(1, k_max + 1)[:, None]
    i = np.arange(k_max + 1)[None, :]
    valid = i <= k
    j = np.where(valid, k - i, 0)
    w = np.where(valid, binom.pmf(i, k, p_interf), 0.0)
    mean = i * stats.mu_i + j * stats.mu_u
    var = i * stats.var_i + j * stats.var_u
    std = np.sqrt(var)
    pos = std > 0
    safe = np.where(pos, std, 1.0)
    z = (need - mean) / safe
    surv = np.where(pos, ndtr(z), (mean < need).astype(float))
    dens = np.where(pos, np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi), 0.0) * w
    S = (w * surv).sum(axis=1)
    dS = np.stack([
        (dens * (-i / safe)).sum(axis=1),
        (dens * (-z * i / (2 * safe * safe))).sum(axis=1),
        (dens * (-j / safe)).sum(axis=1),
        (dens * (-z * j / (2 * safe * safe))).sum(axis=1),
    ])
    return S, dS


def constraint_terms(w: np.ndarray, batch: Batch, cfg: TrainConfig, w0: float) -> ConstraintTerms:
    """Mean power, service-time MGF and their gradients w.r.t. each slot's level.

    The MGF is accumulated in summation-by-parts form
    ``e^{theta T} + sum_{k=1}^{K} S(k) (e^{theta (k+1) T} - e^{theta k T})``,
    i.e. the PMF sum over ``k <= K`` plus the leftover mass ``S(K)`` placed
    at ``K + 1`` slots. Every term is nonnegative, so there is no
    cancellation, and the leftover keeps the estimate from ignoring service
    times beyond ``K``.
    """
    w = np.asarray(w, dtype=float)
    p = waterfill_at_level(batch.gamma, w)
    active = p > 0
    n_active = active.sum(axis=1)
    power = p.sum(axis=1)
    rates = w0 * np.log1p(p * batch.gamma).sum(axis=1) / LN2

    interf = np.asarray(batch.interfered, dtype=bool)
    r_i, r_u = rates[interf], rates[~interf]
    if r_i.size < 2 or r_u.size < 2:
        missing = "interfered" if r_i.size < 2 else "interference-free"
        raise ValueError(f"batch has fewer than 2 {missing} slots")
    stats = RateStats(float(r_i.mean()), float(r_i.var()), float(r_u.mean()), float(r_u.var()), r_i.size, r_u.size)

    theta_t = cfg.theta_star.theta * cfg.t_f
    need = cfg.m_bits * 1000.0 / cfg.t_f
    S, dS = _survival_table(stats, cfg.p_interf, need, cfg.k_max_cap)
    k = np.arange(1, cfg.k_max_cap + 1)
    coef = np.exp(theta_t * (k + 1)) - np.exp(theta_t * k)
    mgf = float(np.exp(theta_t) + coef @ S)
    d_stats = dS @ coef

    # d stats / d rate: mean -> 1/n, population variance -> 2 (r - mean) / n
    d_rate = np.where(
        interf,
        (d_stats[0] + 2.0 * (rates - stats.mu_i) * d_stats[1]) / max(r_i.size, 1),
        (d_stats[2] + 2.0 * (rates - stats.mu_u) * d_stats[3]) / max(r_u.size, 1),
    )
    # active RBs satisfy 1 + p gamma = w gamma, so d rate / d w = w0 n_active / (w ln 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dr_dw = np.where(n_active > 0, w0 * n_active / (w * LN2), 0.0)
    b = len(batch)
    return ConstraintTerms(
        mean_power=float(power.mean()),
        mgf=mgf,
        stats=stats,
        d_power=n_active / b,
        d_mgf=d_rate * dr_dw,
        active=active,
    )


def _loss_and_dw(terms: ConstraintTerms, lam: float, cfg: TrainConfig, form: str):
    a = cfg.theta_star.a_const
    if form == "literal":
        constraint = terms.mgf - a
        loss = terms.mean_power + lam * constraint
        dw = terms.d_power + lam * terms.d_mgf
    elif form == "normalized":
        scale = cfg.power_scale or 1.0
        constraint = float(np.log(terms.mgf / a))
        loss = terms.mean_power / scale + lam * constraint
        dw = terms.d_power / scale + lam * terms.d_mgf / terms.mgf
    else:
        raise ValueError(f"unknown loss form {form!r}")
    return float(loss), constraint, dw


def lagrangian(params: PolicyParams, dual: DualState, batch: Batch, cfg: TrainConfig, w0: float, form: str = "literal") -> float:
    """Batch Lagrangian; ``form="literal"`` is ``mean power + lam (MGF - A)``."""
    w = water_level(params, batch.gamma, chunk=cfg.chunk)
    loss, _, _ = _loss_and_dw(constraint_terms(w, batch, cfg, w0), dual.lam, cfg, form)
    return loss


def gradients(params: PolicyParams, dual: DualState, batch: Batch, cfg: TrainConfig, w0: float, form: str = "literal"):
    """Parameter gradients (ordered as :meth:`PolicyParams.arrays`) and the dual gradient.

    The dual gradient is the constraint value of the chosen loss form.
    Returns ``(grads, dual_grad, info)`` with ``info`` holding the loss terms.
    """
    gamma = batch.gamma
    net = params if cfg.dtype == "float64" else params.astype(cfg.dtype)
    cache = None
    if gamma.size * sum(params.dims[1:-1]) <= cfg.cache_limit:
        w, cache = forward_cached(net, gamma)
    else:
        w = water_level(net, gamma, chunk=cfg.chunk)
    terms = constraint_terms(w, batch, cfg, w0)
    loss, constraint, dw = _loss_and_dw(terms, dual.lam, cfg, form)
    if not np.all(np.isfinite(dw)):
        raise NonFiniteGradientError("non-finite gradient at the water-level node")
    grads = [g.astype(float, copy=False) for g in level_vjp(net, gamma, dw, chunk=cfg.chunk, cache=cache)]
    for idx, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            layer, kind = divmod(idx, 3)
            raise NonFiniteGradientError(f"non-finite gradient in layer {layer} {('elem', 'agg', 'bias')[kind]}")
    info = {"loss": loss, "mean_power": terms.mean_power, "mgf": terms.mgf, "constraint": constraint, "stats": terms.stats}
    return grads, constraint, info


class Adam:
    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads) -> None:
        """In-place update of ``arrays``."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    params: PolicyParams
    dual: DualState
    history: list[tuple[int, float, float, float]]

    def history_csv(self) -> str:
        lines = ["iter,mean_power_w,constraint_value,lambda"]
        lines += [f"{i},{p!r},{c!r},{l!r}" for i, p, c, l in self.history]
        return "\n".join(lines) + "\n"


def reference_scales(chan: ChannelParams, cfg: TrainConfig, gamma: np.ndarray) -> tuple[float, float]:
    """Mean water level and mean power of the fixed-service-time baseline on ``gamma``."""
    k = baseline_service_slots(cfg.theta_star, cfg.t_f)
    target = baseline_rate(cfg.m_bits, k, cfg.t_f)
    levels = water_level_for_rate(gamma, target, chan.w0)
    power = waterfill_at_level(gamma, levels).sum(axis=1)
    return float(levels.mean()), float(power.mean())


def train(
    cfg: TrainConfig,
    chan: ChannelParams,
    rng: np.random.Generator,
    params: PolicyParams | None = None,
) -> TrainResult:
    """Alternate an Adam step on the policy with projected ascent on ``lam``.

    The training set is ``cfg.n_train_slots`` slots drawn once from ``rng``;
    each iteration uses a fresh random minibatch of it. Raises
    :class:`DivergenceError` on a non-finite loss or when ``lam`` exceeds
    ``cfg.lambda_cap``.
    """
    gamma, interfered = sample_slots(chan, rng, cfg.n_train_slots)
    n = gamma.shape[0]
    level_ref, power_ref = reference_scales(chan, cfg, gamma[: min(len(gamma), 20_000)])
    if cfg.level_scale is None:
        cfg.level_scale = level_ref
    if cfg.power_scale is None:
        cfg.power_scale = power_ref
    if params is None:
        params = PolicyParams.init(rng, chan.gamma_ref, cfg.level_scale, cfg.dims)
    dual = DualState(cfg.lambda_init)
    opt = Adam(params.arrays(), lr=cfg.primal_lr)
    history = []
    bs = min(cfg.batch_size, n)
    for it in range(1, cfg.n_iters + 1):
        # primal step size decays geometrically to lr_decay times its start value
        decay = cfg.lr_decay ** ((it - 1) / max(cfg.n_iters - 1, 1))
        opt.lr = cfg.primal_lr * decay
        idx = rng.choice(n, size=bs, replace=False)
        batch = Batch(gamma[idx], interfered[idx])
        grads, constraint, info = gradients(params, dual, batch, cfg, chan.w0, form="normalized")
        if not np.isfinite(info["loss"]):
            raise DivergenceError(f"non-finite loss at iteration {it}", history)
        opt.step(params.arrays(), grads)
        # clipping bounds the dual step; a collapsed policy can push
        # log(MGF/A) to ~40, and one such burst overshoots lam for hundreds of steps
        step = constraint if cfg.dual_clip is None else float(np.clip(constraint, -cfg.dual_clip, cfg.dual_clip))
        dual.step(cfg.dual_lr, step)
        history.append((it, info["mean_power"], constraint, dual.lam))
        if dual.lam > cfg.lambda_cap:
            raise DivergenceError(f"lambda exceeded {cfg.lambda_cap} at iteration {it}", history)
        if it % 100 == 0:
            log.info("iter %d power %.4g W constraint %+.4g lambda %.4g", it, info["mean_power"], constraint, dual.lam)
    params.meta.update(power_scale=cfg.power_scale)
    if cfg.calibration_margin is not None:
        calib = min(n, 50_000)
        shift = calibrate_level(params, Batch(gamma[:calib], interfered[:calib]), cfg, chan.w0)
        params.meta.update(level_shift=shift)
        log.info("calibrated output bias by %+.4g", shift)
    check = Batch(gamma[: min(n, 50_000)], interfered[: min(n, 50_000)])
    terms = constraint_terms(water_level(params, check.gamma, chunk=cfg.chunk), check, cfg, chan.w0)
    params.meta.update(final_constraint=float(np.log(terms.mgf / cfg.theta_star.a_const)), final_power=terms.mean_power)
    return TrainResult(params, dual, history)


def calibrate_level(params: PolicyParams, batch: Batch, cfg: TrainConfig, w0: float) -> float:
    """Shift the output bias so ``log(MGF/A) = -calibration_margin`` on ``batch``.

    The shift moves every slot's water level in the same direction, and the
    MGF falls as levels rise, so the root is bracketed and bisected. Applied
    in place; returns the shift.
    """
    target = -cfg.calibration_margin
    raw = _pooled_raw(params, batch.gamma, cfg.chunk)

    def excess(shift):
        w = params.level_scale * np.maximum(raw + shift, 0.0)
        terms = constraint_terms(w, batch, cfg, w0)
        return np.log(terms.mgf / cfg.theta_star.a_const) - target

    lo, hi = -0.5, 0.5
    while excess(hi) > 0:
        hi *= 2.0
        if hi > 1e3:
            raise DivergenceError("calibration cannot meet the constraint")
    while excess(lo) < 0 and lo > -1e3:
        lo *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    params.bias[-1] += hi
    return float(hi)


def _pooled_raw(params: PolicyParams, gamma, chunk: int) -> np.ndarray:
    out = np.empty(gamma.shape[0])
    for s in range(0, gamma.shape[0], chunk):
        out[s:s + chunk] = _forward(params, gamma[s:s + chunk], keep=False)[0]
    return out
