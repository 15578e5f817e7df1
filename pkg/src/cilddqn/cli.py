"""Command-line entry points for the experiment harness.

Subcommands: train, eval, ablate-reward, param-study, two-step.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    ExperimentConfig,
    run_eval,
    run_param_study,
    run_reward_ablation,
    run_training,
    run_two_step,
    write_eval_table,
)


def _add_common(p):
    p.add_argument("--algo", default="cil-ddqn",
                   help="cil-ddqn | iddqn | ldqn | fixedtime | sotl")
    p.add_argument("--scenario", default="grid-4x4",
                   help="registry name (grid-2x2, grid-4x4, two-step) or scenario file path")
    p.add_argument("--reward-mode", default="local", choices=("local", "global", "discount"))
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    p.add_argument("--out", default="runs")
    p.add_argument("--config", default=None,
                   help="JSON file of extra ExperimentConfig fields (agent_overrides etc.)")
    p.add_argument("--log-steps", action="store_true",
                   help="also write per-step episode logs (large)")


def _build_config(args):
    extra = {}
    if args.config:
        with open(args.config) as fh:
            extra = json.load(fh)
    cfg = ExperimentConfig(
        algorithm=args.algo,
        scenario=args.scenario,
        reward_mode=args.reward_mode,
        episodes=args.episodes,
        seeds=tuple(args.seeds),
        out_dir=args.out,
        log_steps=args.log_steps,
        **extra,
    )
    return cfg.validate()


def main(argv=None):
    parser = argparse.ArgumentParser(prog="cilddqn",
                                     description="traffic-signal MARL experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (or roll out) one algorithm over seeds")
    _add_common(p)

    p = sub.add_parser("eval", help="greedy evaluation of trained checkpoints")
    _add_common(p)
    p.add_argument("--eval-episodes", type=int, default=1)

    p = sub.add_parser("ablate-reward", help="algorithms x reward modes study")
    _add_common(p)

    p = sub.add_parser("param-study", help="sweep d_e or d_l")
    _add_common(p)
    p.add_argument("--parameter", required=True, choices=("d_e", "d_l"))
    p.add_argument("--values", type=float, nargs="+", required=True)

    p = sub.add_parser("two-step", help="train on the two-step matrix game")
    _add_common(p)

    args = parser.parse_args(argv)
    cfg = _build_config(args)

    if args.command == "train":
        run_training(cfg)
        print(f"wrote training curves to {cfg.out_dir}")
    elif args.command == "eval":
        cfg.eval_episodes = args.eval_episodes
        row = run_eval(cfg)
        path = write_eval_table(cfg.out_dir, [row])
        print(f"wrote {path}")
    elif args.command == "ablate-reward":
        run_reward_ablation(cfg)
        print(f"wrote {cfg.out_dir}/ablation_travel_time.csv")
    elif args.command == "param-study":
        run_param_study(cfg, args.parameter, args.values)
        print(f"wrote {cfg.out_dir}/study_{args.parameter}.csv")
    elif args.command == "two-step":
        results = run_two_step(cfg)
        payoffs = [r["payoff"] for r in results]
        print(f"final greedy payoffs per seed: {payoffs}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
