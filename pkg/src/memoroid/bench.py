"""Return-to-go throughput: backward loop vs memoroid scans.

The report separates what must be reproducible (sizes, errors, output digests)
from wall-clock measurements, so two runs with the same seed can be compared
byte for byte on ``results``.
"""

from __future__ import annotations

import hashlib
import os
import statistics
import time

import numpy as np

from .returns import naive_return_to_go, return_to_go
from .scan import ScanSchedule

__all__ = ["REPORT_SCHEMA", "WORKERS_ENV", "default_workers", "make_instance", "bench_returns"]

REPORT_SCHEMA = "memoroid.bench-returns/1"
WORKERS_ENV = "MEMOROID_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    value = int(raw)
    if value < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return value


def make_instance(rng: np.random.Generator, timesteps: int, max_len: int):
    """Rewards and done flags for back-to-back episodes, lengths uniform in ``[1, max_len]``.

    The last episode is cut so the total is exactly ``timesteps``.
    """
    lengths = []
    total = 0
    while total < timesteps:
        n = int(rng.integers(1, max_len + 1))
        n = min(n, timesteps - total)
        lengths.append(n)
        total += n
    ends = np.cumsum(lengths) - 1
    dones = np.zeros(timesteps, dtype=np.int64)
    dones[ends] = 1
    rewards = rng.standard_normal(timesteps)
    return rewards, dones, len(lengths)


def _digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def _stats(xs):
    if not xs:
        return {"mean_s": None, "std_s": None}
    return {"mean_s": statistics.fmean(xs), "std_s": statistics.pstdev(xs)}


def bench_returns(max_len: int, trials: int, timesteps: int | None = None, workers=(1,), gamma: float = 0.99,
                  seed: int = 0, block_size: int = 4096, executor: str = "thread",
                  tolerance: float = 1e-6) -> dict:
    """Time the backward loop against ``return_to_go`` for each worker budget.

    ``timesteps`` defaults to ``max_len``.  Every scan output is checked
    against the loop (relative error at most ``tolerance``) before its timing
    is recorded; a mismatch raises ``AssertionError``.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if trials < 0:
        raise ValueError("trials must be >= 0")
    timesteps = max_len if timesteps is None else timesteps
    workers = sorted({int(w) for w in workers})
    config = {"max_len": max_len, "trials": trials, "timesteps": timesteps, "workers": workers,
              "gamma": gamma, "seed": seed, "block_size": block_size, "executor": executor}
    results, timings = [], []
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        rewards, dones, n_episodes = make_instance(rng, timesteps, max_len)
        ref, t_naive = _timed(lambda: naive_return_to_go(rewards, dones, gamma))
        scale = np.maximum(np.abs(ref), 1.0)
        entry = {"trial": trial, "timesteps": timesteps, "episodes": n_episodes, "digest": {}, "max_rel_err": {}}
        times = {"trial": trial, "naive": t_naive}
        runs = [("vectorized", None)] + [(f"scan_w{w}", w) for w in workers]
        for label, w in runs:
            if w is None:
                out, dt = _timed(lambda: return_to_go(rewards, dones, gamma, method="vectorized"))
            else:
                sched = ScanSchedule(worker_budget=w, block_size=block_size, executor=executor)
                out, dt = _timed(lambda: return_to_go(rewards, dones, gamma, sched=sched))
            err = float(np.max(np.abs(out - ref) / scale)) if timesteps else 0.0
            if err > tolerance:
                raise AssertionError(f"trial {trial}: {label} differs from the backward loop ({err:.3e})")
            entry["digest"][label] = _digest(out)
            entry["max_rel_err"][label] = err
            times[label] = dt
        scan_digests = {entry["digest"][f"scan_w{w}"] for w in workers}
        entry["identical_across_workers"] = len(scan_digests) <= 1
        results.append(entry)
        timings.append(times)

    methods = ["naive", "vectorized"] + [f"scan_w{w}" for w in workers]
    summary = {m: _stats([t[m] for t in timings]) for m in methods}
    speedup = {}
    if timings:
        naive = summary["naive"]["mean_s"]
        speedup = {m: naive / summary[m]["mean_s"] for m in methods if m != "naive" and summary[m]["mean_s"]}
        lo, hi = f"scan_w{workers[0]}", f"scan_w{workers[-1]}"
        speedup["workers_max_over_min"] = summary[lo]["mean_s"] / summary[hi]["mean_s"]
    return {
        "schema": REPORT_SCHEMA,
        "config": config,
        "results": results,
        "timings": {"per_trial": timings, "summary": summary, "speedup_vs_naive": speedup},
        "host": {"cpu_count": os.cpu_count()},
    }
