"""Memoroids: a monoid plus a lift into it and a readout out of it.

A memoroid turns a sequence of partial transitions ``(o, b)`` into recurrent
states ``h_t = e • f(p_0) • ... • f(p_t)`` and Markov states
``s_t = g(h_t, p_t)``.  ``make_resettable`` wraps any monoid so that a begin
flag wipes everything to its left, which lets one scan run over many episodes
laid end to end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .scan import AssociativeOperator, ScanSchedule, associative_scan, scan_parallel, tree_map

__all__ = [
    "PartialTransition",
    "MemoroidDefinition",
    "ResettableElement",
    "EpisodeBoundaryError",
    "make_resettable",
    "apply",
    "apply_resettable",
    "apply_batched",
    "step",
]


class EpisodeBoundaryError(ValueError):
    """A sequence that must start an episode does not."""


class PartialTransition(NamedTuple):
    """Observation and begin flag.

    Both fields may carry leading batch/time axes, in which case ``b`` has the
    shape of ``o`` without its last (feature) axis.
    """

    o: Any
    b: Any


class ResettableElement(NamedTuple):
    A: Any
    b: Any


@dataclass(frozen=True)
class MemoroidDefinition:
    monoid: AssociativeOperator
    lift: Callable[[PartialTransition], Any]
    readout: Callable[[Any, PartialTransition], Any]


def _is_scalar_flag(b) -> bool:
    if isinstance(b, (bool, int, np.integer, np.bool_)):
        return True
    return getattr(b, "ndim", 1) == 0


def _expand(flag, leaf):
    extra = getattr(leaf, "ndim", 0) - flag.ndim
    if extra <= 0:
        return flag
    return flag.reshape(tuple(flag.shape) + (1,) * extra)


def _select(flag, when_set, otherwise):
    """Exact per-element two-way select; the unselected branch is never mixed in."""
    if _is_scalar_flag(flag):
        return when_set if bool(flag) else otherwise
    if isinstance(flag, np.ndarray):
        return tree_map(lambda s, o: np.where(_expand(flag, o) != 0, s, o), when_set, otherwise)
    import torch

    return tree_map(lambda s, o: torch.where(_expand(flag, o) != 0, s, o), when_set, otherwise)


def _flag_or(b1, b2):
    if _is_scalar_flag(b1) and _is_scalar_flag(b2):
        return max(int(b1), int(b2))
    if isinstance(b1, np.ndarray) or isinstance(b2, np.ndarray):
        return np.maximum(b1, b2)
    import torch

    return torch.maximum(b1, b2)


class _ResettableCombine:
    # A class rather than a closure so the operator stays picklable.
    def __init__(self, base: AssociativeOperator):
        self.base = base

    def __call__(self, x: ResettableElement, y: ResettableElement) -> ResettableElement:
        left = _select(y.b, self.base.identity, x.A)
        return ResettableElement(self.base.combine(left, y.A), _flag_or(x.b, y.b))


def make_resettable(op: AssociativeOperator) -> AssociativeOperator:
    """``(A, b) ∘ (A', b') = (sel(b', e, A) • A', b ∨ b')`` with identity ``(e, 0)``."""
    return AssociativeOperator(ResettableElement(op.identity, 0), _ResettableCombine(op))


def apply(m: MemoroidDefinition, ps: Sequence[PartialTransition], sched: ScanSchedule | None = None):
    """Run a memoroid over one episode.  Begin flags are ignored.

    Returns ``(recurrent_states, markov_states)`` as lists.
    """
    lifted = [m.lift(p) for p in ps]
    hs = scan_parallel(m.monoid, lifted, sched)
    return hs, [m.readout(h, p) for h, p in zip(hs, ps)]


def apply_resettable(m: MemoroidDefinition, ps: Sequence[PartialTransition], sched: ScanSchedule | None = None):
    """Run a memoroid over consecutive episodes delimited by begin flags."""
    ps = list(ps)
    if not ps:
        return [], []
    if int(ps[0].b) != 1:
        raise EpisodeBoundaryError("first partial transition must have b = 1")
    op = make_resettable(m.monoid)
    elems = [ResettableElement(m.lift(p), int(p.b)) for p in ps]
    hs = [e.A for e in scan_parallel(op, elems, sched)]
    return hs, [m.readout(h, p) for h, p in zip(hs, ps)]


def apply_batched(m: MemoroidDefinition, ps: PartialTransition, resettable: bool = True):
    """Vectorised form of ``apply_resettable`` (or ``apply``) for array inputs.

    ``ps.o`` has shape ``(T, ..., d_o)`` with time first; ``ps.b`` has shape
    ``(T, ...)``.  Lift and readout are called once on the whole batch.
    """
    lifted = m.lift(ps)
    if resettable:
        op = make_resettable(m.monoid)
        hs = associative_scan(op.combine, ResettableElement(lifted, ps.b)).A
    else:
        hs = associative_scan(m.monoid.combine, lifted)
    return hs, m.readout(hs, ps)


def step(m: MemoroidDefinition, h, p: PartialTransition):
    """Single recurrent update for rollouts: ``(h', s)`` from state ``h`` and ``p``.

    ``h`` may be ``None`` before the first step; a begin flag resets it.
    """
    base = m.monoid.identity if h is None else _select(p.b, m.monoid.identity, h)
    h_next = m.monoid.combine(base, m.lift(p))
    return h_next, m.readout(h_next, p)
