"""Replay storage: tape-based batching (TBB) and segment-based batching (SBB).

Transitions are kept column-wise in numpy arrays.  A ``Tape`` holds them in
insertion order together with the list of episode start positions; sampling
concatenates whole episodes.  SBB instead splits each episode into fixed
length fragments and zero-pads them into rows with a validity mask.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "Transition",
    "Transitions",
    "Tape",
    "TapeError",
    "SegmentBatch",
    "tape_insert",
    "tape_sample",
    "sbb_split",
    "sbb_pad",
    "sbb_unpad",
    "sbb_build_dataset",
    "padding_fraction",
    "episode_lengths",
]


class TapeError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    o: np.ndarray
    a: int
    r: float
    o_next: np.ndarray
    b: int
    d: int


class Transitions(NamedTuple):
    """Column-wise block of transitions; every field shares the leading axis."""

    obs: np.ndarray  # (..., d_o) float64
    action: np.ndarray  # (...,) int64
    reward: np.ndarray  # (...,) float64
    next_obs: np.ndarray  # (..., d_o) float64
    begin: np.ndarray  # (...,) int8
    done: np.ndarray  # (...,) int8

    def __len__(self):
        return self.reward.shape[0]

    def replace(self, **columns) -> "Transitions":
        """Copy with some columns swapped.  ``_replace`` is unusable: it checks
        ``len()``, which counts transitions here, not fields."""
        return Transitions(*(columns.pop(name, col) for name, col in zip(self._fields, self)))

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[-1]

    def take(self, idx) -> "Transitions":
        return Transitions(*(col[idx] for col in self))

    def transition(self, i: int) -> Transition:
        return Transition(self.obs[i].copy(), int(self.action[i]), float(self.reward[i]),
                          self.next_obs[i].copy(), int(self.begin[i]), int(self.done[i]))

    def to_list(self) -> list[Transition]:
        return [self.transition(i) for i in range(len(self))]

    @classmethod
    def empty(cls, obs_dim: int, shape=(0,)) -> "Transitions":
        return cls.zeros(obs_dim, shape)

    @classmethod
    def zeros(cls, obs_dim: int, shape=(0,)) -> "Transitions":
        """Zero transitions: zero vectors, a = 0, r = 0, b = d = 0."""
        shape = tuple(np.atleast_1d(shape))
        return cls(
            np.zeros(shape + (obs_dim,)), np.zeros(shape, dtype=np.int64), np.zeros(shape),
            np.zeros(shape + (obs_dim,)), np.zeros(shape, dtype=np.int8), np.zeros(shape, dtype=np.int8),
        )

    @classmethod
    def from_list(cls, items: Sequence[Transition], obs_dim: int | None = None) -> "Transitions":
        if not items:
            if obs_dim is None:
                raise ValueError("obs_dim is required for an empty list")
            return cls.empty(obs_dim)
        return cls(
            np.stack([np.asarray(t.o, dtype=np.float64) for t in items]),
            np.array([t.a for t in items], dtype=np.int64),
            np.array([t.r for t in items], dtype=np.float64),
            np.stack([np.asarray(t.o_next, dtype=np.float64) for t in items]),
            np.array([t.b for t in items], dtype=np.int8),
            np.array([t.d for t in items], dtype=np.int8),
        )

    @classmethod
    def concat(cls, parts: Sequence["Transitions"]) -> "Transitions":
        return cls(*(np.concatenate(cols, axis=0) for cols in zip(*parts)))

    def equals(self, other: "Transitions") -> bool:
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self, other))


def _begin_positions(block: Transitions) -> list[int]:
    return [int(i) for i in np.flatnonzero(block.begin)]


@dataclass
class Tape:
    """Flat transition store ``D`` plus episode start indices ``I``.

    Single writer: at most one caller may ``insert`` at a time, and sampling
    must not overlap an insert.
    """

    obs_dim: int
    capacity: int
    data: Transitions = None
    index: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise TapeError("capacity must be positive")
        if self.data is None:
            self.data = Transitions.empty(self.obs_dim)

    def __len__(self):
        return len(self.data)

    @property
    def num_episodes(self) -> int:
        return len(self.index)

    def episode_bounds(self, i: int) -> tuple[int, int]:
        end = self.index[i + 1] if i + 1 < len(self.index) else len(self.data)
        return self.index[i], end

    def episode(self, i: int) -> Transitions:
        start, end = self.episode_bounds(i)
        return self.data.take(slice(start, end))

    def episodes(self) -> list[Transitions]:
        return [self.episode(i) for i in range(self.num_episodes)]

    def _pop_oldest(self):
        start, end = self.episode_bounds(0)
        length = end - start
        self.data = self.data.take(slice(end, None))
        self.index = [i - length for i in self.index[1:]]

    def insert(self, rollout: Transitions, on_policy: bool = False) -> "Tape":
        n = len(rollout)
        if n > self.capacity:
            raise TapeError(f"rollout of {n} transitions exceeds capacity {self.capacity}")
        starts = _begin_positions(rollout)
        if on_policy:
            if n and (not starts or starts[0] != 0):
                raise TapeError("on-policy rollout must start an episode (b = 1 at position 0)")
            self.data = rollout.take(slice(None))
            self.index = starts
            return self
        if n == 0:
            return self
        saved = self.data, self.index
        while len(self.data) + n > self.capacity:
            self._pop_oldest()
        if len(self.data) == 0 and rollout.begin[0] != 1:
            self.data, self.index = saved
            raise TapeError("rollout must start an episode (b = 1 at position 0) when the tape is empty")
        offset = len(self.data)
        self.index = self.index + [offset + s for s in starts]
        self.data = Transitions.concat([self.data, rollout])
        return self

    def sample(self, batch_size: int, rng: np.random.Generator) -> Transitions:
        """Concatenate uniformly drawn whole episodes, truncated to ``batch_size``."""
        if batch_size < 1:
            raise TapeError("batch size must be >= 1")
        if not self.index:
            raise TapeError("cannot sample from an empty tape")
        parts = []
        total = 0
        while total < batch_size:
            i = int(rng.integers(0, len(self.index)))
            start, end = self.episode_bounds(i)
            parts.append((start, end))
            total += end - start
        idx = np.concatenate([np.arange(s, e) for s, e in parts])[:batch_size]
        return self.data.take(idx)

    def check_invariants(self) -> None:
        n = len(self.data)
        if n > self.capacity:
            raise AssertionError(f"{n} transitions exceed capacity {self.capacity}")
        if n == 0:
            if self.index:
                raise AssertionError("index entries on an empty tape")
            return
        idx = np.asarray(self.index)
        if idx[0] != 0:
            raise AssertionError("first episode must start at 0")
        if np.any(np.diff(idx) <= 0):
            raise AssertionError("episode indices must be strictly increasing")
        if not np.array_equal(np.flatnonzero(self.data.begin), idx):
            raise AssertionError("begin flags disagree with the episode index")

    # Snapshot layout, little-endian:
    #   b"TAPE" | u32 version (1) | u32 obs_dim | u64 n | u64 n_index | u64 capacity
    #   n packed records: f64[obs_dim] obs | i64 action | f64 reward
    #                     | f64[obs_dim] next_obs | u8 begin | u8 done
    #   n_index u64 episode start indices

    _MAGIC = b"TAPE"
    _VERSION = 1

    def _record_dtype(self):
        return np.dtype([("obs", "<f8", (self.obs_dim,)), ("action", "<i8"), ("reward", "<f8"),
                         ("next_obs", "<f8", (self.obs_dim,)), ("begin", "u1"), ("done", "u1")])

    def save(self, path) -> None:
        n = len(self.data)
        rec = np.zeros(n, dtype=self._record_dtype())
        for name, col in zip(Transitions._fields, self.data):
            rec[name] = col
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<IIQQQ", self._VERSION, self.obs_dim, n, len(self.index), self.capacity))
            fh.write(rec.tobytes())
            fh.write(np.asarray(self.index, dtype="<u8").tobytes())

    @classmethod
    def load(cls, path) -> "Tape":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != cls._MAGIC:
            raise TapeError(f"{path}: not a tape snapshot")
        version, obs_dim, n, n_index, capacity = struct.unpack_from("<IIQQQ", raw, 4)
        if version != cls._VERSION:
            raise TapeError(f"{path}: unsupported snapshot version {version}")
        tape = cls(obs_dim=obs_dim, capacity=capacity)
        dt = tape._record_dtype()
        pos = 4 + struct.calcsize("<IIQQQ")
        rec = np.frombuffer(raw, dtype=dt, count=n, offset=pos)
        pos += dt.itemsize * n
        tape.data = Transitions(
            rec["obs"].astype(np.float64), rec["action"].astype(np.int64), rec["reward"].astype(np.float64),
            rec["next_obs"].astype(np.float64), rec["begin"].astype(np.int8), rec["done"].astype(np.int8),
        )
        tape.index = [int(i) for i in np.frombuffer(raw, dtype="<u8", count=n_index, offset=pos)]
        return tape


def tape_insert(tape: Tape, rollout: Transitions, on_policy: bool = False) -> Tape:
    return tape.insert(rollout, on_policy=on_policy)


def tape_sample(tape: Tape, batch_size: int, rng: np.random.Generator) -> Transitions:
    return tape.sample(batch_size, rng)


# --- segment-based batching ------------------------------------------------------

@dataclass
class SegmentBatch:
    """``segments`` columns have shape ``(rows, L, ...)``; ``masks`` is ``(rows, L)``."""

    segments: Transitions
    masks: np.ndarray

    def __len__(self):
        return self.masks.shape[0]

    @property
    def segment_length(self) -> int:
        return self.masks.shape[1]

    def rows(self, idx) -> "SegmentBatch":
        return SegmentBatch(self.segments.take(idx), self.masks[idx])

    def fragments(self) -> list[Transitions]:
        return [sbb_unpad(self.segments.take(i), self.masks[i]) for i in range(len(self))]

    def to_episodes(self) -> list[Transitions]:
        """Rejoin fragments; a fragment whose first transition has ``b = 1`` opens an episode."""
        episodes: list[list[Transitions]] = []
        for frag in self.fragments():
            if not episodes or (len(frag) and frag.begin[0] == 1):
                episodes.append([frag])
            else:
                episodes[-1].append(frag)
        return [Transitions.concat(parts) for parts in episodes]

    def padding_fraction(self) -> float:
        return padding_fraction(self.masks)

    def validate(self) -> None:
        """Each mask row must be ones followed by zeros."""
        m = self.masks.astype(np.int8)
        if np.any((m != 0) & (m != 1)) or np.any(np.diff(m, axis=1) > 0):
            raise ValueError("mask rows must be a prefix of ones followed by zeros")


def sbb_split(episode: Transitions, L: int) -> list[Transitions]:
    if L < 1:
        raise ValueError("segment length must be >= 1")
    return [episode.take(slice(i, i + L)) for i in range(0, len(episode), L)]


def sbb_pad(fragment: Transitions, L: int) -> tuple[Transitions, np.ndarray]:
    n = len(fragment)
    if n > L:
        raise ValueError(f"fragment of length {n} does not fit segment length {L}")
    pad = Transitions.zeros(fragment.obs_dim, L - n)
    segment = Transitions.concat([fragment, pad])
    mask = np.concatenate([np.ones(n, dtype=np.int8), np.zeros(L - n, dtype=np.int8)])
    return segment, mask


def sbb_unpad(segment: Transitions, mask: np.ndarray) -> Transitions:
    return segment.take(slice(0, int(np.sum(mask))))


def sbb_build_dataset(episodes: Sequence[Transitions], L: int, obs_dim: int | None = None) -> SegmentBatch:
    rows, masks = [], []
    for ep in episodes:
        for frag in sbb_split(ep, L):
            seg, mask = sbb_pad(frag, L)
            rows.append(seg)
            masks.append(mask)
    if not rows:
        if obs_dim is None:
            raise ValueError("obs_dim is required for an empty dataset")
        return SegmentBatch(Transitions.zeros(obs_dim, (0, L)), np.zeros((0, L), dtype=np.int8))
    segments = Transitions(*(np.stack(cols) for cols in zip(*rows)))
    return SegmentBatch(segments, np.stack(masks))


def padding_fraction(masks: np.ndarray) -> float:
    masks = np.asarray(masks)
    if masks.size == 0:
        return 0.0
    return 1.0 - float(masks.sum()) / masks.size


def episode_lengths(tape: Tape) -> list[int]:
    return [e - s for s, e in (tape.episode_bounds(i) for i in range(tape.num_episodes))]


def length_histogram(lengths: Sequence[int]) -> dict[int, int]:
    return dict(sorted(Counter(int(n) for n in lengths).items()))
