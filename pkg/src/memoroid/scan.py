"""Inclusive scans over associative operators.

Two execution paths share the same algebra:

* ``scan_sequential`` / ``scan_parallel`` work on plain Python sequences of
  arbitrary elements.  ``scan_parallel`` is a blocked Blelloch scan whose
  combining tree depends only on the sequence length and the block size, so
  floating point results do not change with the number of workers.
* ``associative_scan`` works on *batched* elements: tuples of numpy arrays or
  torch tensors whose leading axis is time.  Each level of the tree is a single
  vectorised ``combine`` call, which is what the differentiable models use.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "AssociativeOperator",
    "ScanSchedule",
    "scan_sequential",
    "scan_parallel",
    "blelloch_exclusive",
    "associative_scan",
    "tree_map",
]


@dataclass(frozen=True)
class AssociativeOperator:
    """A monoid: an identity element and an associative ``combine``.

    ``combine`` must be pure.  For use with a process executor it must also be
    picklable (a module-level function or an instance of a picklable class).
    """

    identity: Any
    combine: Callable[[Any, Any], Any]

    def __call__(self, a, b):
        return self.combine(a, b)


_EXECUTORS = ("thread", "process")


@dataclass(frozen=True)
class ScanSchedule:
    """How ``scan_parallel`` splits work.

    The reduction tree is a function of ``(len(xs), block_size)`` only;
    ``worker_budget`` and ``executor`` change who evaluates it, never what is
    evaluated.
    """

    worker_budget: int = 1
    block_size: int = 256
    executor: str = "thread"

    def __post_init__(self):
        if self.worker_budget < 1:
            raise ValueError(f"worker_budget must be >= 1, got {self.worker_budget}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.executor not in _EXECUTORS:
            raise ValueError(f"executor must be one of {_EXECUTORS}, got {self.executor!r}")


def scan_sequential(op: AssociativeOperator, xs: Sequence) -> list:
    """Left fold keeping every intermediate: ``y[t] = x[0] • ... • x[t]``.

    Uses exactly ``len(xs) - 1`` combine calls.
    """
    out = []
    acc = None
    for i, x in enumerate(xs):
        acc = x if i == 0 else op.combine(acc, x)
        out.append(acc)
    return out


# Marks a slot known to hold the identity (padding, or the root of the
# down-sweep).  Combining with it is skipped, which is exact by the identity law.
class _Identity:
    __slots__ = ()

    def __repr__(self):
        return "<identity>"


_PAD = _Identity()


def _join(combine, a, b):
    if a is _PAD:
        return b
    if b is _PAD:
        return a
    return combine(a, b)


def blelloch_exclusive(op: AssociativeOperator, xs: Sequence) -> list:
    """Work-efficient exclusive scan (up-sweep then down-sweep).

    The input is padded to a power of two with identity slots; the first
    output is ``op.identity``.
    """
    n = len(xs)
    if n == 0:
        return []
    size = 1 << max(0, math.ceil(math.log2(n)))
    tree = list(xs) + [_PAD] * (size - n)

    d = 1
    while d < size:
        for i in range(2 * d - 1, size, 2 * d):
            tree[i] = _join(op.combine, tree[i - d], tree[i])
        d *= 2

    tree[size - 1] = _PAD
    d = size // 2
    while d >= 1:
        for i in range(2 * d - 1, size, 2 * d):
            left = tree[i - d]
            tree[i - d] = tree[i]
            # the right subtree starts at i - d + 1; all padding means its
            # prefix is never read
            tree[i] = _PAD if i - d + 1 >= n else _join(op.combine, tree[i], left)
        d //= 2

    return [op.identity if t is _PAD else t for t in tree[:n]]


def _local_scan(combine, block):
    out = [block[0]]
    for x in block[1:]:
        out.append(combine(out[-1], x))
    return out


def _local_scans(combine, blocks):
    return [_local_scan(combine, b) for b in blocks]


def _prefix_blocks(combine, tasks):
    return [[combine(prefix, y) for y in block] for prefix, block in tasks]


def _groups(items, k):
    """Split ``items`` into at most ``k`` contiguous, near-equal groups."""
    k = max(1, min(k, len(items)))
    step = math.ceil(len(items) / k)
    return [items[i:i + step] for i in range(0, len(items), step)]


def _run(sched: ScanSchedule, fn, items: list) -> list:
    if sched.worker_budget == 1 or len(items) <= 1:
        return [y for group in [items] for y in fn(group)]
    groups = _groups(items, sched.worker_budget)
    pool_cls = ThreadPoolExecutor if sched.executor == "thread" else ProcessPoolExecutor
    with pool_cls(max_workers=sched.worker_budget) as pool:
        results = list(pool.map(fn, groups))
    return [y for r in results for y in r]


def scan_parallel(op: AssociativeOperator, xs: Sequence, sched: ScanSchedule | None = None) -> list:
    """Blocked Blelloch inclusive scan.

    1. each block of ``block_size`` elements is scanned sequentially;
    2. the block totals go through ``blelloch_exclusive``;
    3. every element of block ``k > 0`` is combined with block ``k``'s
       exclusive prefix.

    Steps 1 and 3 are distributed over ``sched.worker_budget`` workers.  Total
    work is below ``3 n`` combine calls for any block size.
    """
    sched = sched or ScanSchedule()
    xs = list(xs)
    n = len(xs)
    if n == 0:
        return []
    bs = sched.block_size
    blocks = [xs[i:i + bs] for i in range(0, n, bs)]
    local = _run(sched, partial(_local_scans, op.combine), blocks)
    if len(local) == 1:
        return local[0]
    prefixes = blelloch_exclusive(op, [blk[-1] for blk in local])
    tasks = list(zip(prefixes[1:], local[1:]))
    rest = _run(sched, partial(_prefix_blocks, op.combine), tasks)
    out = list(local[0])
    for blk in rest:
        out.extend(blk)
    return out


# --- batched path -----------------------------------------------------------

def tree_map(fn, *trees):
    """Map ``fn`` over the leaves of matching tuple / NamedTuple structures."""
    first = trees[0]
    if isinstance(first, tuple):
        children = [tree_map(fn, *parts) for parts in zip(*trees)]
        if hasattr(first, "_fields"):
            return type(first)(*children)
        return tuple(children)
    return fn(*trees)


def _leaves(tree):
    if isinstance(tree, tuple):
        for t in tree:
            yield from _leaves(t)
    else:
        yield tree


def _is_numpy(x):
    return isinstance(x, (np.ndarray, np.generic))


def _cat(parts):
    if _is_numpy(parts[0]):
        return np.concatenate(parts, axis=0)
    import torch

    return torch.cat(parts, dim=0)


def _interleave(even, odd):
    """``[e0, o0, e1, o1, ...]`` along axis 0; ``len(even) - len(odd)`` is 0 or 1."""
    n_odd = odd.shape[0]
    head = even[:n_odd]
    if _is_numpy(even):
        stacked = np.stack([head, odd], axis=1)
    else:
        import torch

        stacked = torch.stack([head, odd], dim=1)
    merged = stacked.reshape((2 * n_odd,) + tuple(odd.shape[1:]))
    if even.shape[0] > n_odd:
        merged = _cat([merged, even[n_odd:]])
    return merged


def associative_scan(combine: Callable, elems):
    """Inclusive scan of batched elements along axis 0.

    ``elems`` is a (nested) tuple of arrays sharing the leading length ``n``;
    ``combine`` takes two such tuples and works elementwise over the leading
    axes.  This is the recursive form of the Blelloch tree: pairs are reduced
    (up-sweep), the half-length problem is solved recursively, and the even
    positions are filled in from the odd ones (down-sweep).  ``O(n)`` work and
    ``O(log n)`` depth; the tree is fixed by ``n``.
    """
    n = next(_leaves(elems)).shape[0]
    if n < 2:
        return elems
    left = tree_map(lambda x: x[0:-1:2], elems)
    right = tree_map(lambda x: x[1::2], elems)
    odd = associative_scan(combine, combine(left, right))
    rest = tree_map(lambda x: x[2::2], elems)
    if n % 2 == 0:
        even_tail = combine(tree_map(lambda x: x[:-1], odd), rest)
    else:
        even_tail = combine(odd, rest)
    even = tree_map(lambda x0, t: _cat([x0[:1], t]), elems, even_tail)
    return tree_map(_interleave, even, odd)
