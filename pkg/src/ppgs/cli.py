"""Command-line interface.

Subcommands cover the whole pipeline: `gen` levels, `collect` random
trajectories, `train` the world model, `plan` a single level, `eval` a
planner over a level set, `metrics` for latent prediction quality,
`ablate` for the ablation variants, and `fringe` for the fringe-size
experiment.

Any subcommand accepts `--config FILE` with flat `key = value` lines
mirroring the long flag names; explicit flags override the file. All
randomness flows from `--seed`.
"""
from __future__ import annotations

import argparse
import sys

from . import envs, harness, worldmodel
from .planner import DEFAULT_TMAX


def parse_config_file(path) -> dict:
    cfg = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, value = line.split("=", 1)
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ValueError(f"bad config line: {line!r}")
                key, value = parts
            cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def apply_config(args: argparse.Namespace, argv) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    cfg = parse_config_file(args.config)
    explicit = {
        tok.split("=", 1)[0].lstrip("-").replace("-", "_")
        for tok in argv
        if tok.startswith("--")
    }
    for key, raw in cfg.items():
        if key in explicit or not hasattr(args, key):
            continue
        setattr(args, key, _coerce(raw, getattr(args, key)))
    return args


def parse_seed_range(text: str) -> range:
    """Half-open seed range 'A..B' (or a single seed 'N')."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return range(int(lo), int(hi))
    n = int(text)
    return range(n, n + 1)


def resolve_levels(args) -> list:
    """--levels accepts a JSONL path, 'train'/'test' keywords (with --env
    and --count), or a seed range 'A..B' (with --env)."""
    spec = args.levels
    if spec == "train":
        seeds = harness.train_seeds(args.count)
    elif spec == "test":
        seeds = harness.test_seeds(args.count)
    elif ".." in spec or spec.isdigit():
        seeds = parse_seed_range(spec)
    else:
        return envs.load_levels(spec)
    if not args.env:
        raise SystemExit("--env is required when --levels is not a file")
    return envs.generate_batch(args.env, seeds)


def _add_common(p, *, env=False, levels=False, model=False):
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--seed", type=int, default=0, help="run seed")
    if env:
        p.add_argument("--env", default="", choices=("",) + envs.ENV_IDS)
    if levels:
        p.add_argument("--levels", default="test",
                       help="JSONL path, 'train'/'test', or seed range A..B")
        p.add_argument("--count", type=int, default=100,
                       help="level count for 'train'/'test' keywords")
    if model:
        p.add_argument("--model", required=True, help="model checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppgs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate solvable levels")
    _add_common(p)
    p.add_argument("--env", required=True, choices=envs.ENV_IDS)
    p.add_argument("--seeds", required=True, help="half-open range A..B")
    p.add_argument("--out", required=True)

    p = sub.add_parser("collect", help="collect uniform-random trajectories")
    _add_common(p)
    p.add_argument("--levels", required=True, help="levels JSONL file")
    p.add_argument("--traj", type=int, default=20, help="trajectories per level")
    p.add_argument("--len", type=int, default=20, dest="horizon",
                   help="steps per trajectory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the world model")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset JSONL file")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--no-hybrid", action="store_true",
                   help="context-free forward model")
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="loss log CSV path")

    p = sub.add_parser("plan", help="plan a single level")
    _add_common(p)
    p.add_argument("--model", default=None,
                   help="checkpoint path (omit for oracle-* modes)")
    p.add_argument("--env", required=True, choices=envs.ENV_IDS)
    p.add_argument("--level-seed", type=int, required=True)
    p.add_argument("--mode", default="full",
                   choices=("oneshot", "oneshot-noreid", "full", "full-nolookup",
                            "oracle-oneshot", "oracle-full", "gs-images"))
    p.add_argument("--tmax", type=int, default=DEFAULT_TMAX)
    p.add_argument("--budget", type=int, default=256)
    p.add_argument("--out", default=None, help="also write the JSON here")

    p = sub.add_parser("eval", help="evaluate a planner over levels")
    _add_common(p, env=True, levels=True)
    p.add_argument("--model", default=None)
    p.add_argument("--mode", default="full",
                   choices=harness.PLANNER_MODES + ("oracle-oneshot", "oracle-full"))
    p.add_argument("--budget", type=int, default=256)
    p.add_argument("--tmax", type=int, default=DEFAULT_TMAX)
    p.add_argument("--fault", type=float, default=0.0,
                   help="prediction corruption probability")
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="latent prediction metrics")
    _add_common(p, env=True, levels=True, model=True)
    p.add_argument("--horizons", default="1,10")
    p.add_argument("--trajectories", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="run an ablation variant")
    _add_common(p, env=True, levels=True)
    p.add_argument("--which", required=True, choices=harness.ABLATIONS)
    p.add_argument("--data", default=None, help="dataset JSONL (retraining variants)")
    p.add_argument("--model", default=None, help="checkpoint (planner variants)")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--budget", type=int, default=256)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--metrics-out", default=None)

    p = sub.add_parser("fringe", help="fringe-size experiment")
    _add_common(p, env=True, levels=True)
    p.add_argument("--model", default=None, help="checkpoint (omit for oracles)")
    p.add_argument("--tmax", type=int, default=DEFAULT_TMAX)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--out", required=True)

    return parser


def _load_model(path):
    return worldmodel.WorldModel.load(path) if path else None


def cmd_gen(args):
    levels = envs.generate_batch(args.env, parse_seed_range(args.seeds))
    envs.save_levels(levels, args.out)
    print(f"wrote {len(levels)} {args.env} levels to {args.out}")


def cmd_collect(args):
    levels = envs.load_levels(args.levels)
    dataset = harness.collect(levels, args.traj, args.horizon, args.seed)
    harness.save_dataset(dataset, args.out)
    print(f"wrote {harness.n_transitions(dataset)} transitions "
          f"({len(levels)} levels) to {args.out}")


def cmd_train(args):
    dataset = harness.load_dataset(args.data)
    obs_shape = envs.observe(envs.start_state(dataset[0].level)).shape
    cfg = worldmodel.WorldModelConfig(d=args.dim, eps=args.eps,
                                      alpha=args.alpha, beta=args.beta,
                                      hybrid=not args.no_hybrid)
    model = worldmodel.WorldModel(obs_shape, cfg, seed=args.seed)
    tcfg = worldmodel.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                                  lr=args.lr, seed=args.seed)
    history = worldmodel.train(
        model, harness.pack_dataset(dataset), tcfg,
        log=lambda row: print(f"epoch {row['epoch']:3d}  "
                              f"fw {row['l_fw']:.5f}  ce {row['l_ce']:.5f}  "
                              f"margin {row['l_margin']:.5f}  "
                              f"total {row['l_total']:.5f}"))
    model.save(args.out)
    if args.log:
        worldmodel.write_loss_log(history, args.log)
    print(f"saved model to {args.out}")


def cmd_plan(args):
    level = envs.generate(args.env, args.level_seed)
    mode = args.mode
    model = None
    if mode.startswith("oracle-"):
        mode = mode[len("oracle-"):]
    elif mode != "gs-images":
        if not args.model:
            raise SystemExit("--model is required for learned-model modes")
        model = _load_model(args.model)
    eps = model.eps if model is not None else 0.1
    res = harness.run_level(model, level, mode, eps=eps, seed=args.seed,
                            step_budget=args.budget, tmax=args.tmax)
    payload = res.to_json(level.seed, args.mode)
    print(payload)
    if args.out:
        with open(args.out, "w") as f:
            f.write(payload + "\n")


def cmd_eval(args):
    levels = resolve_levels(args)
    mode = args.mode
    model = None
    if mode.startswith("oracle-"):
        mode = mode[len("oracle-"):]
    elif mode != "gs-images":
        if not args.model:
            raise SystemExit("--model is required for learned-model modes")
        model = _load_model(args.model)
    report = harness.evaluate(model, mode, levels, step_budget=args.budget,
                              seed=args.seed, tmax=args.tmax, fault_p=args.fault)
    report.to_csv(args.out)
    print(f"{args.mode}: success rate {report.success_rate:.3f} "
          f"over {len(levels)} levels -> {args.out}")


def cmd_metrics(args):
    model = _load_model(args.model)
    levels = resolve_levels(args)
    horizons = tuple(int(h) for h in args.horizons.split(","))
    metrics = harness.latent_metrics(model, levels, horizons=horizons,
                                     n_trajectories=args.trajectories,
                                     seed=args.seed)
    harness.write_metrics_csv(metrics, args.out)
    for k in sorted(metrics):
        print(f"H@{k} {metrics[k]['h']:.3f}  MMR@{k} {metrics[k]['mmr']:.3f}")


def cmd_ablate(args):
    levels = resolve_levels(args)
    model = _load_model(args.model) if args.model else None
    dataset = harness.load_dataset(args.data) if args.data else None
    if args.which in ("no-inverse", "latent-forward") and dataset is None:
        raise SystemExit(f"--data is required for ablation {args.which!r}")
    if args.which not in ("no-inverse", "latent-forward") and model is None:
        raise SystemExit(f"--model is required for ablation {args.which!r}")
    obs_shape = envs.observe(envs.start_state(levels[0])).shape
    tcfg = worldmodel.TrainConfig(epochs=args.epochs, seed=args.seed)
    out = harness.run_ablation(args.which, dataset=dataset, eval_levels=levels,
                               obs_shape=obs_shape, model=model, train_cfg=tcfg,
                               step_budget=args.budget, seed=args.seed)
    out["report"].to_csv(args.out)
    if args.metrics_out:
        harness.write_metrics_csv(out["metrics"], args.metrics_out)
    print(f"{args.which}: success rate {out['report'].success_rate:.3f}")


def cmd_fringe(args):
    levels = resolve_levels(args)
    model = _load_model(args.model) if args.model else None
    eps = model.eps if model is not None else args.eps
    fringe = harness.fringe_experiment(model, levels, eps=eps,
                                       tmax=args.tmax, seed=args.seed)
    harness.write_fringe_csv(fringe, args.out)
    print(f"wrote fringe profile for {len(levels)} levels to {args.out}")


_COMMANDS = {
    "gen": cmd_gen,
    "collect": cmd_collect,
    "train": cmd_train,
    "plan": cmd_plan,
    "eval": cmd_eval,
    "metrics": cmd_metrics,
    "ablate": cmd_ablate,
    "fringe": cmd_fringe,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args = apply_config(args, argv)
    _COMMANDS[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
