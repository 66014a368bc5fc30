"""Off-policy DQN training loop over TBB or SBB replay."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..batching import SegmentBatch, Tape, Transitions, sbb_build_dataset
from ..models import save_checkpoint
from .config import ExperimentConfig
from .envs import CardEnv, ToyEnvSpec
from .pipeline import PipelineConfig, QPipelineParams, RecurrentPolicy
from .updates import QOptimizer, sbb_q_update, tbb_q_update

__all__ = ["run_episode", "evaluate", "train", "run_experiment", "SegmentStore", "epsilon_at"]

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def env_spec(cfg: ExperimentConfig) -> ToyEnvSpec:
    return ToyEnvSpec(cfg.task, cfg.k, cfg.episode_length, cfg.n_cards)


def pipeline_config(cfg: ExperimentConfig) -> PipelineConfig:
    return PipelineConfig(cfg.model, cfg.n_cards, cfg.n_cards, cfg.hidden, cfg.memory, cfg.context)


def run_episode(env: CardEnv, policy: RecurrentPolicy | None, epsilon: float, rng: np.random.Generator):
    """Roll out one episode with epsilon-greedy actions; returns ``(transitions, return)``."""
    obs = env.reset()
    if policy is not None:
        policy.reset()
    rows = []
    begin, done, total = 1, False, 0.0
    while not done:
        if policy is None or rng.random() < epsilon:
            action = int(rng.integers(0, env.n_actions))
        else:
            action = int(policy.q_values(obs, begin).argmax())
        next_obs, reward, done = env.step(action)
        rows.append((obs, action, reward, next_obs, begin, int(done)))
        total += reward
        obs, begin = next_obs, 0
    o, a, r, o2, b, d = zip(*rows)
    block = Transitions(np.stack(o), np.array(a, dtype=np.int64), np.array(r), np.stack(o2),
                        np.array(b, dtype=np.int8), np.array(d, dtype=np.int8))
    return block, total


def _act_policy(params: QPipelineParams, epsilon: float):
    return None if epsilon >= 1.0 else RecurrentPolicy(params.theta, params.config)


def evaluate(params: QPipelineParams, spec: ToyEnvSpec, episodes: int, seed) -> list[float]:
    """Greedy returns on a fixed, seed-determined set of episodes."""
    env = CardEnv(spec, np.random.default_rng(seed))
    policy = RecurrentPolicy(params.theta, params.config)
    rng = np.random.default_rng(0)
    return [run_episode(env, policy, 0.0, rng)[1] for _ in range(episodes)]


def epsilon_at(cfg: ExperimentConfig, epoch: int) -> float:
    horizon = max(1, int(cfg.epochs_train * cfg.eps_anneal_fraction))
    frac = min(1.0, epoch / horizon)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


class SegmentStore:
    """FIFO of padded SBB rows with a capacity measured in row slots (rows * L)."""

    def __init__(self, obs_dim: int, segment_length: int, capacity: int):
        self.L = segment_length
        self.max_rows = max(1, capacity // segment_length)
        self.data = sbb_build_dataset([], segment_length, obs_dim=obs_dim)

    def __len__(self):
        return len(self.data)

    def add_episode(self, episode: Transitions):
        new = sbb_build_dataset([episode], self.L)
        merged = SegmentBatch(Transitions.concat([self.data.segments, new.segments]),
                              np.concatenate([self.data.masks, new.masks]))
        excess = len(merged) - self.max_rows
        self.data = merged.rows(slice(excess, None)) if excess > 0 else merged

    def sample(self, n_rows: int, rng: np.random.Generator) -> SegmentBatch:
        return self.data.rows(rng.integers(0, len(self.data), size=n_rows))


@dataclass
class _Writers:
    metrics: object
    timings: object


def train(cfg: ExperimentConfig, seed: int, out_dir: Path | str | None = None) -> list[dict]:
    """Train one seed.  Returns the metric records; with ``out_dir`` also writes

    ``metrics.jsonl`` (deterministic), ``timings.jsonl`` (wall clock),
    ``summary.csv`` and ``checkpoint.bin`` (+ ``.json``).
    """
    cfg.validate()
    spec = env_spec(cfg)
    dtype = _DTYPES[cfg.dtype]
    params = QPipelineParams.create(pipeline_config(cfg), seed, beta=cfg.beta, dtype=dtype)
    opt = QOptimizer(params, lr=cfg.lr, warmup=cfg.warmup, grad_clip=cfg.grad_clip)
    rng = np.random.default_rng([seed, 0])
    env = CardEnv(spec, np.random.default_rng([seed, 1]))

    tape = Tape(obs_dim=spec.n_cards, capacity=cfg.capacity)
    store = SegmentStore(spec.n_cards, cfg.segment_length, cfg.capacity) if cfg.batching == "sbb" else None

    def insert(block):
        tape.insert(block)
        if store is not None:
            store.add_episode(block)

    for _ in range(cfg.epochs_random):
        insert(run_episode(env, None, 1.0, rng)[0])

    out = Path(out_dir) if out_dir is not None else None
    writers = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writers = _Writers(open(out / "metrics.jsonl", "w", encoding="utf-8"),
                           open(out / "timings.jsonl", "w", encoding="utf-8"))

    records = []
    losses = []
    start = time.perf_counter()
    try:
        for epoch in range(cfg.epochs_train):
            eps = epsilon_at(cfg, epoch)
            block, train_return = run_episode(env, _act_policy(params, eps), eps, rng)
            insert(block)
            for _ in range(cfg.updates_per_epoch):
                if store is None:
                    batch = tape.sample(cfg.batch_size, rng)
                    _, loss = tbb_q_update(params, batch, cfg.gamma, opt, cfg.terminal_mask, cfg.next_state)
                else:
                    rows = store.sample(max(1, cfg.batch_size // cfg.segment_length), rng)
                    _, loss = sbb_q_update(params, rows, cfg.gamma, opt, cfg.terminal_mask)
                losses.append(loss)
            last = epoch == cfg.epochs_train - 1
            if (epoch + 1) % cfg.eval_interval == 0 or last:
                returns = evaluate(params, spec, cfg.eval_episodes, [seed, 2])
                rec = {
                    "epoch": epoch + 1,
                    "eval_return": float(np.mean(returns)),
                    "eval_returns": [float(x) for x in returns],
                    "train_return": float(train_return),
                    "loss": float(np.mean(losses)) if losses else None,
                    "epsilon": float(eps),
                    "updates": opt.updates,
                }
                records.append(rec)
                losses = []
                log.info("seed %d epoch %d eval %.3f loss %s", seed, epoch + 1, rec["eval_return"], rec["loss"])
                if writers is not None:
                    writers.metrics.write(json.dumps(rec, sort_keys=True) + "\n")
                    writers.timings.write(json.dumps({"epoch": epoch + 1,
                                                      "elapsed_s": time.perf_counter() - start}) + "\n")
    finally:
        if writers is not None:
            writers.metrics.close()
            writers.timings.close()

    if out is not None:
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "eval_return", "train_return", "loss"])
            for rec in records:
                w.writerow([rec["epoch"], repr(rec["eval_return"]), repr(rec["train_return"]), repr(rec["loss"])])
        meta = {"pipeline": params.config.to_dict(), "experiment": cfg.to_dict(), "seed": seed,
                "format": "memoroid.checkpoint/1"}
        save_checkpoint(out / "checkpoint.bin", params.theta, meta)
    return records


def run_experiment(cfg: ExperimentConfig, out_dir: Path | str | None = None) -> dict[int, list[dict]]:
    root = Path(out_dir or cfg.output_dir)
    return {seed: train(cfg, seed, root / f"seed_{seed}") for seed in cfg.seeds}
