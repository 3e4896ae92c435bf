"""Command-line entry point: ``sacha train|eval|heuristics|rollout|plot-data|analysis``."""
import argparse
import csv
import glob
import json
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, ContractError, GenerationError, ParseError

LOG_COLUMNS = ("run", "step", "train_step", "success_rate", "average_step", "loss_q", "entropy",
               "mean_advantage", "episodes", "side", "agents")

ANALYSIS_TOLERANCES = {
    "global_vs_local": 1e-8,
    "global_vs_local_entropy": 1e-8,
    "baseline_invariance": 1e-10,
    "score_zero_mean": 1e-12,
    "single_agent": 1e-12,
}


def _write_json(path, obj):
    if path == "-":
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def cmd_train(args):
    from .trainer import Trainer, load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    tr = Trainer(cfg, args.out)
    try:
        summary = tr.run(total_steps=args.steps, time_limit=args.time_limit)
        tr.save(os.path.join(args.out, "final.ckpt"))
    finally:
        tr.close()
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(json.dumps(summary))
    return 0


def _instances(args, grid):
    from .evaluation import generate_instances
    from .mapio import load_scen

    if args.scen:
        return [load_scen(args.scen, grid, args.agents)]
    return generate_instances(grid, args.agents, args.count, args.seed)


def cmd_eval(args):
    from .evaluation import evaluate
    from .mapio import load_map
    from .trainer import load_policy

    policy = load_policy(args.checkpoint)
    grid = load_map(args.map)
    report = evaluate(policy, _instances(args, grid), args.max_steps, seed=args.seed, greedy=not args.sample)
    out = report.to_json()
    if args.json:
        _write_json(args.json, out)
    print(f"success_rate={out['success_rate']:.4f} average_step={out['average_step']:.2f} "
          f"instances={out['instances']}")
    return 0


def read_goals(path):
    """One ``row col`` pair per line; blank lines and ``#`` comments are skipped."""
    goals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'row col', got {line!r}", lineno, path)
            try:
                goals.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"non-integer coordinate in {line!r}", lineno, path) from None
    return goals


def cmd_heuristics(args):
    from .heuristics import goal_heuristic_maps
    from .mapio import load_map

    maps = goal_heuristic_maps(load_map(args.map), read_goals(args.goals))
    _write_json(args.out, maps.to_json())
    return 0


def cmd_rollout(args):
    from .mapio import load_map, load_scen
    from .trainer import load_policy, run_episode

    policy = load_policy(args.checkpoint)
    grid = load_map(args.map)
    inst = load_scen(args.scen, grid, args.agents)
    rng = np.random.default_rng(args.seed)
    res = run_episode(inst, policy, args.max_steps, rng, lam=args.lam, gamma=args.gamma,
                      mode="train" if args.sample else "eval", goal_reward=args.goal_reward)
    _write_json(args.trace, {
        "map": args.map,
        "starts": [list(s) for s in inst.starts],
        "goals": [list(g) for g in inst.goals],
        "max_steps": args.max_steps,
        "lam": args.lam,
        "gamma": args.gamma,
        "goal_reward": args.goal_reward,
        "success": res.success,
        "arrival": res.arrival,
        "steps": res.trace,
    })
    return 0


def _log_files(paths):
    found = []
    for p in paths:
        if os.path.isdir(p):
            found.extend(sorted(glob.glob(os.path.join(p, "**", "*.jsonl"), recursive=True)))
        elif os.path.isfile(p):
            found.append(p)
        else:
            raise FileNotFoundError(f"no such log file or directory: {p}")
    if not found:
        raise ContractError("no training logs found")
    return found


def cmd_plot_data(args):
    files = _log_files(args.logs)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for path in files:
            run = os.path.relpath(path)
            with open(path) as lf:
                for line in lf:
                    if not line.strip():
                        continue
                    rec = json.loads(line)
                    w.writerow([run] + ["" if rec.get(k) is None else rec.get(k) for k in LOG_COLUMNS[1:]])
    return 0


def cmd_analysis(args):
    from .analysis import run_checks

    out = run_checks(args.mdps, args.seed)
    out["tolerances"] = ANALYSIS_TOLERANCES
    out["passed"] = all(out[k] < tol for k, tol in ANALYSIS_TOLERANCES.items())
    _write_json(args.json, out)
    return 0 if out["passed"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="sacha", description="Multi-agent path finding with attention-based soft actor-critic.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a YAML config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None, help="override total environment steps")
    t.add_argument("--time-limit", type=float, default=None, help="seconds")
    t.add_argument("--seed", type=int, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation on a benchmark map")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--map", required=True)
    e.add_argument("--scen", default=None, help="use the first --agents records instead of random instances")
    e.add_argument("--agents", type=int, required=True)
    e.add_argument("--max-steps", type=int, default=256)
    e.add_argument("--count", type=int, default=300)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--sample", action="store_true", help="sample actions instead of greedy decoding")
    e.add_argument("--json", default=None)
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("heuristics", help="write heuristic maps as JSON")
    h.add_argument("--map", required=True)
    h.add_argument("--goals", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_heuristics)

    r = sub.add_parser("rollout", help="write a per-step JSON trace of one episode")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--map", required=True)
    r.add_argument("--scen", required=True)
    r.add_argument("--agents", type=int, required=True)
    r.add_argument("--trace", required=True)
    r.add_argument("--max-steps", type=int, default=256)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--lam", type=float, default=0.1)
    r.add_argument("--gamma", type=float, default=0.95)
    r.add_argument("--goal-reward", choices=("entry", "finish"), default="entry")
    r.add_argument("--sample", action="store_true")
    r.set_defaults(func=cmd_rollout)

    d = sub.add_parser("plot-data", help="flatten training logs to CSV")
    d.add_argument("--logs", required=True, nargs="+", help="log directories or .jsonl files")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plot_data)

    a = sub.add_parser("analysis", help="exact gradient identity checks on tiny MDPs")
    a.add_argument("--json", default="-")
    a.add_argument("--mdps", type=int, default=50)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_analysis)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParseError, ConfigError, ContractError, GenerationError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"sacha {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
