"""Command line entry point: ``qscs <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
from dataclasses import replace
import logging
from pathlib import Path
import sys

import numpy as np

from . import harness
from .env import ConfigError
from .harness import RunConfig


def _base_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.episodes is not None:
        overrides["episodes"] = args.episodes
    if args.agent is not None:
        overrides["agent"] = args.agent
    if args.out is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "lr", None) is not None:
        overrides["lr"] = args.lr
    return replace(cfg, **overrides) if overrides else cfg


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or "runs")


def _print_summary(result) -> None:
    for (cell, agent), (m, f10, best, n) in result.summaries.items():
        print(f"{result.study:12s} {cell:>14s} {agent:9s} mean_ma={m:8.3f} final10_ma={f10:8.3f} "
              f"best_max_ma={best:8.3f} n_seeds={n}")
    for cell, agent, s, err in result.failures:
        print(f"FAILED {cell}/{agent} seed {s}: {err.splitlines()[0]}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = _base_config(args)
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    path = out / f"train_{cfg.agent}_seed{cfg.seed}.csv"
    records, _ = harness.run_training(cfg, path)
    rets = np.array([r.ep_return for r in records])
    print(f"wrote {path}")
    if len(rets) >= 10:
        m, f10, best = harness.summarize(rets)
        print(f"mean_ma={m:.3f} final10_ma={f10:.3f} best_max_ma={best:.3f}")
    return 0


def _seeds(args):
    return range(args.seeds)


def _finish(result, out_dir) -> int:
    from .plots import emit_plots

    _print_summary(result)
    emit_plots(result, out_dir)
    return 1 if result.failures else 0


def cmd_sweep_lr(args) -> int:
    cfg = _base_config(args)
    agents = tuple(args.agents.split(",")) if args.agents else ("dqn", "ppo", "ensemble")
    res = harness.lr_sweep(cfg, seeds=_seeds(args), agents=agents, out_dir=_out(cfg), workers=args.workers)
    return _finish(res, _out(cfg) / "lr_sweep")


def cmd_ablate_n(args) -> int:
    cfg = _base_config(args)
    agents = tuple(args.agents.split(",")) if args.agents else (cfg.agent,)
    res = harness.n_ablation(cfg, seeds=_seeds(args), agents=agents, out_dir=_out(cfg), workers=args.workers)
    return _finish(res, _out(cfg) / "n_ablation")


def cmd_sweep_alpha(args) -> int:
    cfg = _base_config(args)
    agents = tuple(args.agents.split(",")) if args.agents else (cfg.agent,)
    res = harness.alpha_sweep(cfg, seeds=_seeds(args), agents=agents, out_dir=_out(cfg), workers=args.workers)
    return _finish(res, _out(cfg) / "alpha_sweep")


def cmd_noise(args) -> int:
    cfg = _base_config(args)
    agents = tuple(args.agents.split(",")) if args.agents else (cfg.agent,)
    res = harness.noise_study(cfg, seeds=_seeds(args), agents=agents, eval_episodes=args.eval_episodes,
                              out_dir=_out(cfg), workers=args.workers)
    return _finish(res, _out(cfg) / "noise")


def cmd_report(args) -> int:
    cfg = _base_config(args)
    results = harness.report(_out(cfg))
    if not results:
        print(f"no studies found under {_out(cfg)}")
        return 1
    for r in results:
        _print_summary(r)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qscs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--agent", choices=harness.AGENT_KINDS)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        return sp

    def sweep(sp):
        common(sp)
        sp.add_argument("--seeds", type=int, default=10, help="number of seeds per cell")
        sp.add_argument("--agents", help="comma-separated agent kinds")
        return sp

    tr = common(sub.add_parser("train", help="train one agent"))
    tr.add_argument("--lr", type=float)
    tr.set_defaults(func=cmd_train)
    sweep(sub.add_parser("sweep-lr", help="learning-rate sweep")).set_defaults(func=cmd_sweep_lr)
    sweep(sub.add_parser("ablate-n", help="ablation over the number of spins")).set_defaults(func=cmd_ablate_n)
    sweep(sub.add_parser("sweep-alpha", help="reward-weight sweep")).set_defaults(func=cmd_sweep_alpha)
    nz = sweep(sub.add_parser("noise", help="noise-channel robustness study"))
    nz.add_argument("--eval-episodes", type=int, default=100)
    nz.set_defaults(func=cmd_noise)
    common(sub.add_parser("report", help="recompute summaries and plots")).set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
