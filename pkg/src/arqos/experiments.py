"""End-to-end studies built from the library pieces.

Each function takes an :class:`~arqos.config.ExperimentConfig` and an
explicit random generator and returns plain data; the command-line front
end only handles files and exit codes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .allocator import baseline_average_power, baseline_service_slots, waterfill_at_level
from .arrival import neg_mgf
from .channel import sample_slots, slot_rates
from .config import ExperimentConfig
from .learner.evaluation import (
    EvalReport,
    baseline_policy,
    evaluate,
    learned_policy,
    tandem_violation,
)
from .learner.network import PolicyParams, load_checkpoint, save_checkpoint
from .learner.training import TrainConfig, TrainResult, reference_scales, train
from .service_model import ServiceTimeDist, estimate_stats, service_pmf
from .snc import QosExponent, max_feasible_theta, min_tandem_bound, single_bound, solve_theta_star, tandem_bound

__all__ = [
    "LINKS",
    "rng_for",
    "theta_star",
    "bound_curve",
    "exponential_service_bound",
    "bound_vs_sim",
    "service_distribution",
    "baseline_report",
    "train_config",
    "train_link",
    "save_result",
    "checkpoint_path",
    "load_link_policy",
    "evaluate_inr",
    "compare",
    "ks_gaussian",
    "ks_test",
    "audit_constant",
    "CompareRow",
]

LINKS = ("ul", "dl")

# stream tags keep every study on its own reproducible random stream
_STREAMS = {
    "bound-vs-sim": 1, "service-dist": 2, "baseline": 3, "train": 4,
    "evaluate": 5, "compare": 6, "ks-test": 7,
}


def rng_for(seed: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[stream], *extra)))


def _inr_key(inr_db: float) -> int:
    return int(round(inr_db * 100))


def theta_star(cfg: ExperimentConfig) -> QosExponent:
    return solve_theta_star(cfg.arrival.params(), cfg.qos.target())


def bound_curve(cfg: ExperimentConfig, q: QosExponent | None = None) -> np.ndarray:
    """Rows ``(d_max_ms, single_bound, tandem_bound)`` at the shared exponent."""
    q = theta_star(cfg) if q is None else q
    d = np.asarray(cfg.sim.d_grid_ms, dtype=float)
    return np.column_stack([d, single_bound(q, d), tandem_bound(q, q, d)])


def exponential_service_bound(cfg: ExperimentConfig, d_max: float) -> tuple[float, float]:
    """Tightest tandem bound for exponential service at both nodes; ``(bound, theta)``.

    Exponential service of mean ``m`` ms has ``log E[e^{theta delta}] = -log(1 - theta m)``
    for ``theta < 1/m``; the exponent is restricted to where the
    supermartingale condition holds.
    """
    arr = cfg.arrival.params()
    mean = cfg.sim.exp_mean_slots * cfg.channel.slot_ms

    def log_mgf(theta):
        return -np.log1p(-theta * mean) if theta * mean < 1 else np.inf

    theta_max = max_feasible_theta(arr, log_mgf, (1.0 - 1e-12) / mean)
    return min_tandem_bound(arr, theta_max, d_max)


def bound_vs_sim(cfg: ExperimentConfig, rng: np.random.Generator, n_packets: int | None = None) -> np.ndarray:
    """Rows ``(d_max, bound, theta, mc_p, mc_lo, mc_hi, mc_se)`` for exponential service."""
    n = cfg.sim.n_packets if n_packets is None else n_packets
    d_grid = np.asarray(cfg.sim.d_grid_ms, dtype=float)
    mean = cfg.sim.exp_mean_slots * cfg.channel.slot_ms

    def svc(g, m):
        return g.exponential(mean, m)

    est = tandem_violation(cfg.arrival.params(), svc, svc, d_grid, rng, n)
    rows = []
    for d, v in zip(d_grid, est):
        bound, theta = exponential_service_bound(cfg, d) if d > 0 else (1.0, 0.0)
        rows.append((d, bound, theta, v.p, v.lo, v.hi, v.se))
    return np.array(rows)


def _policy_for(cfg: ExperimentConfig, link: str, inr_db: float, q: QosExponent, checkpoint=None):
    chan = cfg.channel.link(link, inr_db)
    if checkpoint is None:
        return chan, baseline_policy(chan, cfg.channel.m_bits(link), q)
    params, _, _ = load_checkpoint(checkpoint)
    return chan, learned_policy(params)


def service_distribution(
    cfg: ExperimentConfig,
    link: str,
    rng: np.random.Generator,
    checkpoint=None,
    n_slots: int | None = None,
) -> ServiceTimeDist:
    """Gaussian-approximation service-time PMF of the baseline (or a checkpoint's) policy."""
    q = theta_star(cfg)
    chan, pol = _policy_for(cfg, link, cfg.channel.inr_db, q, checkpoint)
    gamma, interf = sample_slots(chan, rng, n_slots or cfg.train.n_test_slots)
    stats = estimate_stats(slot_rates(pol(gamma), gamma, chan.w0), interf)
    return service_pmf(stats, chan.p_interf, cfg.channel.m_bits(link), chan.slot_len)


def baseline_report(cfg: ExperimentConfig, link: str, inr_db: float, rng: np.random.Generator, n_slots: int | None = None) -> dict:
    q = theta_star(cfg)
    chan = cfg.channel.link(link, inr_db)
    k = baseline_service_slots(q, chan.slot_len)
    est = baseline_average_power(chan, cfg.channel.m_bits(link), k, rng, n_slots or cfg.sim.n_baseline_slots)
    return {"link": link, "inr_db": inr_db, "k_slots": k, "mean_power_w": est.mean, "se_w": est.se, "n_slots": est.n}


def train_config(cfg: ExperimentConfig, link: str, q: QosExponent) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        theta_star=q,
        m_bits=cfg.channel.m_bits(link),
        t_f=cfg.channel.slot_ms,
        p_interf=cfg.channel.interference_prob,
        batch_size=t.batch_size,
        primal_lr=t.primal_lr,
        dual_lr=t.dual_lr,
        n_iters=t.n_iters,
        seed=cfg.seed,
        k_max_cap=t.k_max_cap,
        lambda_cap=t.lambda_cap,
        lambda_init=t.lambda_init,
        dual_clip=t.dual_clip,
        lr_decay=t.lr_decay,
        n_train_slots=t.n_train_slots,
        dims=t.dims,
        dtype=t.dtype,
        calibration_margin=t.calibration_margin,
    )


def train_link(cfg: ExperimentConfig, link: str, inr_db: float, q: QosExponent | None = None) -> TrainResult:
    q = theta_star(cfg) if q is None else q
    chan = cfg.channel.link(link, inr_db)
    rng = rng_for(cfg.seed, "train", LINKS.index(link), _inr_key(inr_db))
    return train(train_config(cfg, link, q), chan, rng)


def checkpoint_path(out_dir, link: str, inr_db: float) -> Path:
    return Path(out_dir) / f"policy_{link}_inr{inr_db:g}.json"


def save_result(result: TrainResult, path, cfg: ExperimentConfig, link: str, inr_db: float) -> None:
    save_checkpoint(
        path,
        result.params,
        result.dual.lam,
        len(result.history),
        cfg.seed,
        extra={"link": link, "inr_db": inr_db, "config_hash": cfg.config_hash(), **result.params.meta},
    )


def load_link_policy(out_dir, link: str, inr_db: float) -> PolicyParams:
    path = checkpoint_path(out_dir, link, inr_db)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run `train` for INR {inr_db:g} dB first")
    return load_checkpoint(path)[0]


def evaluate_inr(
    cfg: ExperimentConfig,
    inr_db: float,
    policies,
    rng: np.random.Generator,
    n_packets: int | None = None,
    n_pool: int | None = None,
) -> EvalReport:
    q = theta_star(cfg)
    return evaluate(
        policies,
        (cfg.channel.link("ul", inr_db), cfg.channel.link("dl", inr_db)),
        (cfg.channel.m_bits_ul, cfg.channel.m_bits_dl),
        cfg.arrival.params(),
        cfg.qos.target(),
        q,
        rng,
        cfg.sim.n_packets if n_packets is None else n_packets,
        n_pool=cfg.sim.n_pool if n_pool is None else n_pool,
    )


@dataclass(frozen=True)
class CompareRow:
    inr_db: float
    link: str
    policy: str
    baseline_power_w: float
    power_w: float
    gain: float
    audit_product: float
    violation: float
    violation_se: float


def compare(cfg: ExperimentConfig, ckpt_dir, n_packets: int | None = None, n_pool: int | None = None) -> list[CompareRow]:
    """Learned vs baseline power per INR and link, plus a baseline-vs-baseline control row."""
    q = theta_star(cfg)
    rows = []
    for inr in cfg.sim.inr_list_db:
        learned = tuple(load_link_policy(ckpt_dir, link, inr) for link in LINKS)
        base = tuple(baseline_policy(cfg.channel.link(l, inr), cfg.channel.m_bits(l), q) for l in LINKS)
        for name, pols in (("learned", learned), ("baseline", base)):
            rep = evaluate_inr(cfg, inr, pols, rng_for(cfg.seed, "compare", _inr_key(inr)), n_packets, n_pool)
            for link, r in zip(LINKS, (rep.ul, rep.dl)):
                rows.append(CompareRow(inr, link, name, r.baseline_power, r.mean_power, r.gain,
                                       r.audit_product, rep.violation.p, rep.violation.se))
    return rows


def ks_gaussian(samples) -> tuple[float, float]:
    """Two-sided KS test against a Gaussian fitted to the same sample; ``(statistic, p_value)``."""
    x = np.asarray(samples, dtype=float)
    res = sps.kstest(x, "norm", args=(x.mean(), x.std()))
    return float(res.statistic), float(res.pvalue)


def ks_test(
    cfg: ExperimentConfig,
    link: str,
    rng: np.random.Generator,
    checkpoint=None,
    n_slots: int | None = None,
    water_level_w: float | None = None,
) -> dict:
    """Per-class KS p-values of per-slot rates under a fixed-level or learned policy.

    The fixed level defaults to the baseline's mean water level, i.e. a
    policy of the same power scale that ignores the per-slot rate target.
    """
    chan = cfg.channel.link(link, cfg.channel.inr_db)
    n = n_slots or cfg.sim.ks_slots
    gamma, interf = sample_slots(chan, rng, n)
    if checkpoint is not None:
        power = learned_policy(load_checkpoint(checkpoint)[0])(gamma)
        policy = "learned"
    else:
        level = water_level_w or cfg.sim.ks_water_level_w
        if level is None:
            tc = train_config(cfg, link, theta_star(cfg))
            level, _ = reference_scales(chan, tc, gamma)
        power = waterfill_at_level(gamma, np.full(n, level))
        policy = f"fixed-level {level:.6g} W"
    rates = slot_rates(power, gamma, chan.w0)
    out = {"link": link, "inr_db": cfg.channel.inr_db, "policy": policy, "n_slots": n}
    for name, mask in (("interfered", interf), ("interference_free", ~interf)):
        stat, p = ks_gaussian(rates[mask])
        out[name] = {"n": int(mask.sum()), "statistic": stat, "p_value": p}
    out["p_value"] = min(out["interfered"]["p_value"], out["interference_free"]["p_value"])
    return out


def audit_constant(cfg: ExperimentConfig, q: QosExponent | None = None) -> float:
    """``E[e^{-theta* tau}]`` at the configured target."""
    q = theta_star(cfg) if q is None else q
    return float(neg_mgf(cfg.arrival.params(), q.theta))
