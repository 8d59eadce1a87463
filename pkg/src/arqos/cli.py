"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 infeasible QoS target,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .learner.training import DivergenceError, NonFiniteGradientError
from .snc import InfeasibleTargetError

log = logging.getLogger("arqos")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(parser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=d, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=d, help="override the config seed")
    parser.add_argument("--out-dir", metavar="DIR", default=d, help="override the output directory")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arqos", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    add("solve-theta", "print theta*, A and x0 as JSON")
    add("bound-curve", "single-node and tandem bounds over the d_max grid (CSV)")
    p = add("bound-vs-sim", "tandem bound vs Monte Carlo under exponential service (CSV)")
    p.add_argument("--packets", type=int, help="override sim.n_packets")
    p = add("service-dist", "Gaussian-approximation service-time PMF (CSV)")
    p.add_argument("--link", choices=ex.LINKS, default="ul")
    p.add_argument("--checkpoint", help="use a trained policy instead of the baseline")
    p = add("baseline", "fixed-service-time baseline power (JSON)")
    p.add_argument("--inr", type=float, help="override channel.inr_db")
    p.add_argument("--slots", type=int, help="override sim.n_baseline_slots")
    p = add("train", "train UL and DL policies and write checkpoints")
    p.add_argument("--link", choices=(*ex.LINKS, "both"), default="both")
    p.add_argument("--inr", type=float, action="append", help="INR in dB (repeatable)")
    p.add_argument("--all-inr", action="store_true", help="train at every INR of sim.inr_list_db")
    p = add("evaluate", "evaluate trained UL/DL policies at one INR (JSON)")
    p.add_argument("--inr", type=float, help="override channel.inr_db")
    p.add_argument("--ckpt-dir", help="checkpoint directory (default: out-dir)")
    p.add_argument("--packets", type=int, help="override sim.n_packets")
    p = add("compare", "learned vs baseline power per INR (CSV)")
    p.add_argument("--ckpt-dir", help="checkpoint directory (default: out-dir)")
    p.add_argument("--packets", type=int, help="override sim.n_packets")
    p = add("ks-test", "KS test of per-class slot rates against a fitted Gaussian (JSON)")
    p.add_argument("--link", choices=ex.LINKS, default="ul")
    p.add_argument("--checkpoint", help="use a trained policy instead of a fixed water level")
    p.add_argument("--slots", type=int, help="override sim.ks_slots")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    return cfg.replace(**over) if over else cfg


def _header(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.config_hash()} seed={cfg.seed}"


def write_csv(path: Path, cfg: ExperimentConfig, columns, rows, fmt=None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_header(cfg), ",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _emit(args, obj) -> None:
    if not args.quiet:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _say(args, msg) -> None:
    if not args.quiet:
        print(msg)


def cmd_solve_theta(args, cfg):
    q = ex.theta_star(cfg)
    out = {"theta_star": q.theta, "A": q.a_const, "x0": q.x0, "at_bracket_edge": q.at_bracket_edge}
    _emit(args, out)
    return out


def cmd_bound_curve(args, cfg):
    rows = ex.bound_curve(cfg)
    path = Path(cfg.out_dir) / "bound_curve.csv"
    write_csv(path, cfg, ("d_max_ms", "single_bound", "tandem_bound"), rows)
    _say(args, f"wrote {path}")
    return rows


def cmd_bound_vs_sim(args, cfg):
    rows = ex.bound_vs_sim(cfg, ex.rng_for(cfg.seed, "bound-vs-sim"), args.packets)
    path = Path(cfg.out_dir) / "bound_vs_sim.csv"
    cols = ("d_max_ms", "tandem_bound", "theta", "mc_violation", "mc_ci_lo", "mc_ci_hi", "mc_se")
    write_csv(path, cfg, cols, rows)
    _say(args, f"wrote {path}")
    return rows


def cmd_service_dist(args, cfg):
    dist = ex.service_distribution(cfg, args.link, ex.rng_for(cfg.seed, "service-dist"), args.checkpoint)
    path = Path(cfg.out_dir) / f"service_dist_{args.link}.csv"
    write_csv(path, cfg, ("k", "probability"), zip(dist.support, dist.pmf))
    _say(args, f"wrote {path}")
    return dist


def cmd_baseline(args, cfg):
    inr = cfg.channel.inr_db if args.inr is None else args.inr
    out = {}
    for i, link in enumerate(ex.LINKS):
        out[link] = ex.baseline_report(cfg, link, inr, ex.rng_for(cfg.seed, "baseline", i), args.slots)
    _emit(args, out)
    return out


def cmd_train(args, cfg):
    if args.all_inr:
        inrs = list(cfg.sim.inr_list_db)
    else:
        inrs = args.inr or [cfg.channel.inr_db]
    links = ex.LINKS if args.link == "both" else (args.link,)
    q = ex.theta_star(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = []
    for inr in inrs:
        for link in links:
            res = ex.train_link(cfg, link, inr, q)
            ckpt = ex.checkpoint_path(out_dir, link, inr)
            ex.save_result(res, ckpt, cfg, link, inr)
            log_path = out_dir / f"train_log_{link}_inr{inr:g}.csv"
            write_csv(log_path, cfg, ("iter", "mean_power_w", "constraint_value", "lambda"), res.history)
            summary.append({
                "link": link, "inr_db": inr, "checkpoint": str(ckpt), "log": str(log_path),
                "lambda": res.dual.lam, "final_constraint": res.params.meta.get("final_constraint"),
            })
    _emit(args, summary)
    return summary


def cmd_evaluate(args, cfg):
    inr = cfg.channel.inr_db if args.inr is None else args.inr
    ckpt_dir = args.ckpt_dir or cfg.out_dir
    try:
        pols = tuple(ex.load_link_policy(ckpt_dir, link, inr) for link in ex.LINKS)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    rep = ex.evaluate_inr(cfg, inr, pols, ex.rng_for(cfg.seed, "evaluate"), args.packets)
    out = {"inr_db": inr, **rep.to_dict()}
    _emit(args, out)
    return out


def cmd_compare(args, cfg):
    try:
        rows = ex.compare(cfg, args.ckpt_dir or cfg.out_dir, args.packets)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    path = Path(cfg.out_dir) / "compare.csv"
    cols = ("inr_db", "link", "policy", "baseline_power_w", "power_w", "gain", "audit_product", "violation", "violation_se")
    write_csv(path, cfg, cols, [tuple(vars(r).values()) for r in rows])
    learned = [r for r in rows if r.policy == "learned"]
    for link in ex.LINKS:
        gains = [r.gain for r in learned if r.link == link]
        if len(gains) > 1 and np.any(np.diff(gains) < 0):
            log.warning("%s gain is not nondecreasing in INR: %s", link, np.round(gains, 4).tolist())
    _say(args, f"wrote {path}")
    return rows


def cmd_ks_test(args, cfg):
    out = ex.ks_test(cfg, args.link, ex.rng_for(cfg.seed, "ks-test"), args.checkpoint, args.slots)
    _emit(args, out)
    return out


COMMANDS = {
    "solve-theta": cmd_solve_theta,
    "bound-curve": cmd_bound_curve,
    "bound-vs-sim": cmd_bound_vs_sim,
    "service-dist": cmd_service_dist,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "ks-test": cmd_ks_test,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except InfeasibleTargetError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DivergenceError, NonFiniteGradientError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
