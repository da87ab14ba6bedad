"""``admdp`` command line: collect, train, eval, ablate, gradcheck, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import SEED_ENV, ConfigError, RunConfig

logger = logging.getLogger("admdp")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args, **extra) -> RunConfig:
    overrides = {"task_file": getattr(args, "task", None), "seed": getattr(args, "seed", None),
                 "jobs": getattr(args, "jobs", None), "out_dir": getattr(args, "out", None), **extra}
    env = dict(os.environ)
    if getattr(args, "seed", None) is not None:
        env.pop(SEED_ENV, None)          # an explicit flag beats the environment
    return RunConfig.load(args.config, overrides, env)


def _label(cfg: RunConfig) -> str:
    return cfg.flags.label


def cmd_collect(args) -> int:
    from .demogen import generate_dataset
    cfg = _config(args, episodes=args.episodes, n_points=args.n_points, demo_noise=args.demo_noise)
    m = generate_dataset(cfg.task(), cfg.episodes, cfg.seed, cfg.out_dir, n_points=cfg.n_points, jobs=cfg.jobs,
                         noise=cfg.demo_noise)
    print(f"wrote {m.episodes} episodes of {m.task} to {Path(cfg.out_dir) / m.task}")
    print("patterns: " + ", ".join(f"{p} {n}" for p, n in m.pattern_counts.items()))
    return EXIT_OK


def _agents(spec: str, n_agents: int) -> list[int]:
    if spec == "all":
        return list(range(n_agents))
    try:
        agents = [int(a) for a in spec.split(",")]
    except ValueError:
        raise UsageError(f"--agent takes an index, a comma list or 'all', got {spec!r}") from None
    bad = [a for a in agents if not 0 <= a < n_agents]
    if bad:
        raise UsageError(f"agent index {bad[0]} outside 0..{n_agents - 1}")
    return agents


def cmd_train(args) -> int:
    from .demogen import load_dataset
    from .pipeline import save_checkpoint, train_agent
    extra = {"n_steps": args.steps}
    if args.ablate is not None:
        extra["ablations"] = args.ablate
    cfg = _config(args, **extra)
    task = cfg.task()
    data = Path(args.data) if args.data else Path("data") / task.task
    if not data.exists():
        raise UsageError(f"dataset not found: {data}")
    dataset = load_dataset(data)
    for i in _agents(args.agent, task.n_agents):
        ck = train_agent(dataset, i, cfg)
        path = save_checkpoint(ck, Path(cfg.out_dir) / f"{task.task}_{_label(cfg)}_agent{i}.admc")
        print(f"agent {i}: {ck.steps} steps, config {cfg.hash[:16]} -> {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import AgentCountError, evaluate, load_checkpoint, policy_from_checkpoint
    ckpts = [load_checkpoint(p) for p in args.checkpoints]
    cfg = ckpts[0].config
    n = ckpts[0].n_agents
    if len(ckpts) != n:
        raise UsageError(f"{cfg.task().task} checkpoints are for {n} agents; got {len(ckpts)} file(s)")
    ckpts = sorted(ckpts, key=lambda c: c.agent_index)
    if [c.agent_index for c in ckpts] != list(range(n)):
        raise UsageError("checkpoints must cover each agent exactly once, got agents "
                         + ", ".join(str(c.agent_index) for c in ckpts))
    if len({c.config.task_text for c in ckpts}) != 1:
        raise UsageError("checkpoints were trained on different tasks")
    seed = args.seed if args.seed is not None else int(os.environ.get(SEED_ENV) or cfg.seed)
    episodes = args.episodes or cfg.eval_episodes
    policies = [policy_from_checkpoint(c) for c in ckpts]
    try:
        report = evaluate(policies, cfg.task(), episodes, seed, label=args.label or _label(cfg),
                          step_cap=cfg.step_cap, n_points=cfg.n_points, jobs=args.jobs or 1)
    except AgentCountError as exc:
        raise UsageError(str(exc)) from None
    files = report.write(args.out or cfg.out_dir, f"{report.task}_{report.label}_eval")
    sys.stdout.write(report.to_text())
    print("wrote " + ", ".join(str(f) for f in files))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .pipeline import VARIANTS, ablation_suite
    cfg = _config(args, n_steps=args.steps)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variant {unknown[0]!r}; choose from {', '.join(VARIANTS)}")
    data = Path(args.data) if args.data else Path("data") / cfg.task().task
    if not data.exists():
        raise UsageError(f"dataset not found: {data}")
    cache = Path(args.cache) if args.cache else Path(cfg.out_dir) / "checkpoints"
    cache.mkdir(parents=True, exist_ok=True)
    report = ablation_suite(data, cfg, variants, cache_dir=cache, episodes=args.episodes)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{report.task}_ablation"
    (out / f"{stem}.txt").write_text(report.to_text())
    (out / f"{stem}.kv").write_text(report.to_kv())
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import CHECKS, format_results, run_gradcheck
    only = args.only.split(",") if args.only else None
    if only and any(o not in CHECKS for o in only):
        raise UsageError(f"unknown check in {args.only!r}; available: {', '.join(CHECKS)}")
    results = run_gradcheck(points=args.points, seed=args.seed or 0, only=only, corrupt=args.inject_fault)
    print(format_results(results))
    ok = all(r.report.passed for r in results.values())
    print("all checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_inspect(args) -> int:
    from .demogen.episode_io import MAGIC as EPISODE_MAGIC
    from .demogen.episode_io import read_header as episode_header
    from .pipeline.checkpoint import MAGIC as CKPT_MAGIC
    from .pipeline.checkpoint import read_header as ckpt_header
    path = Path(args.file)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    buf = path.read_bytes()
    if buf[:4] == EPISODE_MAGIC:
        header, _ = episode_header(buf)
        kind = "episode"
    elif buf[:4] == CKPT_MAGIC:
        header, _ = ckpt_header(buf)
        kind = "checkpoint"
    else:
        raise UsageError(f"{path}: not an episode or checkpoint file (magic {buf[:4]!r})")
    print(f"{path}: {kind}, {len(buf)} bytes")
    for k, v in header.items():
        if k == "config_text":
            print("config_text =")
            for line in v.splitlines():
                print(f"    {line}")
        else:
            print(f"{k} = {' '.join(map(str, v)) if isinstance(v, (list, tuple)) else v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="admdp", description="Decoupled multi-agent diffusion policies.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=True):
        sp.add_argument("--config", help="run config file (key = value)")
        sp.add_argument("--task", help="task id or task file; replaces the config's task")
        sp.add_argument("--seed", type=int, help=f"overrides the config seed and ${SEED_ENV}")
        sp.add_argument("--out", help="output directory")
        if jobs:
            sp.add_argument("--jobs", type=int, help="concurrent episodes")

    sp = sub.add_parser("collect", help="generate a scripted demonstration dataset")
    common(sp)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--n-points", type=int, dest="n_points")
    sp.add_argument("--demo-noise", type=float, dest="demo_noise", help="xy noise (m) on expert cruise steps")
    sp.set_defaults(fn=cmd_collect)

    sp = sub.add_parser("train", help="train per-agent policies on a dataset")
    common(sp, jobs=False)
    sp.add_argument("--data", help="dataset directory (default data/<task>)")
    sp.add_argument("--agent", default="all", help="agent index, comma list or 'all'")
    sp.add_argument("--ablate", help="no_pc, no_tact, no_graph, no_amam (comma separated)")
    sp.add_argument("--steps", type=int, help="training steps")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="roll out one checkpoint per agent")
    sp.add_argument("checkpoints", nargs="+")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--seed", type=int, help="first episode seed")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--label")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate every ablation variant")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--variants", help="comma list (default: all)")
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--cache", help="checkpoint cache directory")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference audit of every differentiable block")
    sp.add_argument("--points", type=int, default=10)
    sp.add_argument("--only", help="comma list of checks")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--inject-fault", type=float, default=0.0, dest="inject_fault",
                    help="perturb analytic gradients by this relative amount (negative control)")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("inspect", help="print the header of an episode or checkpoint file")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        print(f"admdp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"admdp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        logger.debug("failure", exc_info=True)
        print(f"admdp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
