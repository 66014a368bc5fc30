"""Discounted returns and GAE as memoroid scans.

The return monoid ``(a, r) • (a', r') = (a a', a r' + r)`` accumulates
``sum_i gamma^i r_i`` from the start of a sequence.  Per-timestep targets need
the suffix sum instead, so ``return_to_go`` and ``gae`` scan the reversed
sequence with the opposite operator ``x •op y = y • x`` wrapped by
``make_resettable``; in reversed order the terminal step of an episode is its
first element, so the done flags act as reset flags.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .core import MemoroidDefinition, PartialTransition, ResettableElement, make_resettable
from .scan import AssociativeOperator, ScanSchedule, associative_scan, scan_parallel

__all__ = [
    "ReturnElement",
    "GaeElement",
    "return_monoid",
    "gae_monoid",
    "return_memoroid",
    "discounted_return_prefix",
    "return_to_go",
    "gae",
    "td_residuals",
    "naive_return_to_go",
    "naive_gae",
]


class ReturnElement(NamedTuple):
    a: float
    r: float


class GaeElement(NamedTuple):
    a: float
    g: float


def _discount_combine(x, y):
    return type(x)(x[0] * y[0], x[0] * y[1] + x[1])


def _opposite_combine(x, y):
    return _discount_combine(y, x)


def _check_unit(name, value):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def return_monoid(gamma: float) -> AssociativeOperator:
    """Monoid over ``ReturnElement``; a reward ``r`` lifts to ``(gamma, r)``."""
    _check_unit("gamma", gamma)
    return AssociativeOperator(ReturnElement(1.0, 0.0), _discount_combine)


def gae_monoid(gamma: float, lam: float) -> AssociativeOperator:
    """Same algebra over ``GaeElement``; a residual lifts to ``(gamma * lam, delta)``."""
    _check_unit("gamma", gamma)
    _check_unit("lambda", lam)
    return AssociativeOperator(GaeElement(1.0, 0.0), _discount_combine)


class _ReturnLift:
    def __init__(self, gamma):
        self.gamma = gamma

    def __call__(self, p):
        return ReturnElement(self.gamma, float(np.asarray(p.o).reshape(-1)[0]))


def _return_readout(h, p):
    return h.r


def return_memoroid(gamma: float) -> MemoroidDefinition:
    """Discounted return from the start of an episode; observations are rewards."""
    return MemoroidDefinition(return_monoid(gamma), _ReturnLift(gamma), _return_readout)


def discounted_return_prefix(rewards: Sequence[float], gamma: float,
                             sched: ScanSchedule | None = None) -> list[ReturnElement]:
    """``out[t] = (gamma^(t + 1), sum_{i <= t} gamma^i r_i)``."""
    op = return_monoid(gamma)
    elems = [ReturnElement(gamma, float(r)) for r in rewards]
    return scan_parallel(op, elems, sched)


def _check_done(dones):
    if len(dones) and int(dones[-1]) != 1:
        raise ValueError("last transition must have done = 1 (incomplete trailing episode)")


def _reverse_discount_scan(decay: float, values, dones, sched, method: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.int64)
    n = len(values)
    if n == 0:
        return np.zeros(0)
    op = make_resettable(AssociativeOperator(ReturnElement(1.0, 0.0), _opposite_combine))
    if method == "vectorized":
        elems = ResettableElement(ReturnElement(np.full(n, decay), values[::-1].copy()), dones[::-1].copy())
        out = associative_scan(op.combine, elems).A.r
        return out[::-1].copy()
    if method != "parallel":
        raise ValueError(f"unknown method {method!r}")
    elems = [ResettableElement(ReturnElement(decay, float(v)), int(d)) for v, d in zip(values[::-1], dones[::-1])]
    out = np.array([e.A.r for e in scan_parallel(op, elems, sched)])
    return out[::-1].copy()


def return_to_go(rewards, dones, gamma: float, sched: ScanSchedule | None = None,
                 method: str = "parallel") -> np.ndarray:
    """``G_t = sum_{l >= t} gamma^(l - t) r_l``, cut at the end of each episode.

    ``method="parallel"`` uses ``scan_parallel`` over Python elements;
    ``method="vectorized"`` runs the same monoid through ``associative_scan``
    on numpy arrays.
    """
    _check_unit("gamma", gamma)
    _check_done(dones)
    return _reverse_discount_scan(gamma, rewards, dones, sched, method)


def td_residuals(rewards, values, next_values, dones, gamma: float) -> np.ndarray:
    """``delta_t = r_t + gamma (1 - d_t) V(s_{t+1}) - V(s_t)``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = 1.0 - np.asarray(dones, dtype=np.float64)
    return rewards + gamma * mask * np.asarray(next_values, dtype=np.float64) - np.asarray(values, dtype=np.float64)


def gae(rewards, values, next_values, dones, gamma: float, lam: float,
        sched: ScanSchedule | None = None, method: str = "parallel") -> np.ndarray:
    """Generalised advantage ``A_t = sum_l (gamma lam)^l delta_{t+l}`` per episode."""
    gae_monoid(gamma, lam)  # validation
    _check_done(dones)
    delta = td_residuals(rewards, values, next_values, dones, gamma)
    return _reverse_discount_scan(gamma * lam, delta, dones, sched, method)


def naive_return_to_go(rewards, dones, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            running = 0.0
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def naive_gae(rewards, values, next_values, dones, gamma: float, lam: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        nonterminal = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * nonterminal * next_values[t] - values[t]
        running = delta + gamma * lam * nonterminal * running
        out[t] = running
    return out
