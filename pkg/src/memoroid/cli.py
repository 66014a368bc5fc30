"""``memoroid`` command line: verify, bench-returns, train, sensitivity.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("memoroid")


class UsageError(Exception):
    pass


def _write_json(path: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def cmd_verify(args) -> int:
    from .verify import SUITES, VerifyContext, run_suites

    filters = args.filter or []
    if filters and not any(f in name for name in SUITES for f in filters):
        raise UsageError(f"--filter {filters} matches no suite; known suites: {', '.join(SUITES)}")
    results = run_suites(VerifyContext(seed=args.seed, inject_fault=args.inject_fault), filters)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.seconds:6.2f}s  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    if args.report:
        _write_json(args.report, {"schema": "memoroid.verify/1", "seed": args.seed,
                                  "inject_fault": args.inject_fault,
                                  "suites": [r.to_dict() for r in results]})
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench_returns(args) -> int:
    from .bench import bench_returns, default_workers

    workers = args.workers or [default_workers()]
    if any(w < 1 for w in workers):
        raise UsageError("--workers values must be >= 1")
    if args.max_len < 1 or args.trials < 0:
        raise UsageError("--max-len must be >= 1 and --trials >= 0")
    try:
        report = bench_returns(args.max_len, args.trials, timesteps=args.timesteps, workers=workers,
                               gamma=args.gamma, seed=args.seed, block_size=args.block_size,
                               executor=args.executor)
    except AssertionError as exc:
        print(f"equivalence check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _write_json(args.output, report)
    return EXIT_OK


def cmd_train(args) -> int:
    import torch

    from .qlearn.config import ConfigError, load_config
    from .qlearn.train import run_experiment

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        if args.output_dir is not None:
            cfg.output_dir = str(args.output_dir)
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(f"config error in {args.config}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc}") from exc
    torch.set_num_threads(1)
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    runs = run_experiment(cfg, root)
    for seed, records in runs.items():
        final = records[-1] if records else {}
        print(f"seed {seed}: final eval return {final.get('eval_return')}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    import torch

    from .models import load_checkpoint
    from .qlearn.envs import CardEnv, ToyEnvSpec
    from .qlearn.pipeline import PipelineConfig
    from .qlearn.sensitivity import sensitivity_profile, write_profile_csv

    if args.episodes < 1 or args.rml < 0:
        raise UsageError("--episodes must be >= 1 and --rml >= 0")
    try:
        tensors, meta = load_checkpoint(args.checkpoint)
        config = PipelineConfig(**meta["pipeline"])
        exp = meta["experiment"]
        spec = ToyEnvSpec(exp["task"], exp["k"], exp["episode_length"], exp["n_cards"])
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    torch.set_num_threads(1)
    env = CardEnv(spec, np.random.default_rng(args.seed))
    action_rng = np.random.default_rng([args.seed, 1])
    profiles = []
    for _ in range(args.episodes):
        obs = [env.reset()]
        done = False
        while not done:
            o, _, done = env.step(int(action_rng.integers(0, env.n_actions)))
            if not done:
                obs.append(o)
        profiles.append(sensitivity_profile(tensors, config, np.stack(obs)))
    out = args.output or Path(args.checkpoint).with_name("sensitivity.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_profile_csv(out, profiles, args.rml)
    at_rml = [float(p.cumulative[min(args.rml, len(p.cumulative) - 1)]) for p in profiles if not p.degenerate]
    print(json.dumps({"schema": "memoroid.sensitivity/1", "csv": str(out), "episodes": args.episodes,
                      "rml": args.rml, "degenerate": sum(p.degenerate for p in profiles),
                      "mean_cumulative_at_rml": float(np.mean(at_rml)) if at_rml else None}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memoroid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the oracle-equivalence and property suites")
    p.add_argument("--filter", action="append", metavar="NAME", help="only suites whose name contains NAME")
    p.add_argument("--inject-fault", action="store_true", help="swap integer add for a non-associative combine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", type=Path, help="also write a JSON report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench-returns", help="time return-to-go: backward loop vs scans")
    p.add_argument("--max-len", type=int, required=True, help="episode lengths are uniform in [1, max-len]")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--timesteps", type=int, help="timesteps per trial (default: max-len)")
    p.add_argument("--workers", type=int, nargs="+", help="worker budgets (default: $MEMOROID_WORKERS or 1)")
    p.add_argument("--executor", choices=("thread", "process"), default="thread")
    p.add_argument("--block-size", type=int, default=4096)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_bench_returns)

    p = sub.add_parser("train", help="train a recurrent Q network from a YAML config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int, help="run only this seed")
    p.add_argument("--output-dir", type=Path, help="override output_dir from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sensitivity", help="per-observation |dQ/do| profiles from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--rml", type=int, required=True, help="lag at which to place the marker column")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, help="CSV path (default: next to the checkpoint)")
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"memoroid {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
