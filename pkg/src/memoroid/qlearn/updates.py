"""Deep Q updates over tape batches (TBB) and padded segment rows (SBB)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..batching import SegmentBatch, Transitions
from .pipeline import QPipelineParams, forward

__all__ = [
    "QOptimizer",
    "tbb_q_loss",
    "sbb_q_loss",
    "tbb_q_update",
    "sbb_q_update",
    "shifted_next_inputs",
]

NEXT_STATE_MODES = ("literal", "shifted")


@dataclass
class QOptimizer:
    """Adam with linear learning-rate warmup and global-norm gradient clipping."""

    params: QPipelineParams
    lr: float = 1e-3
    warmup: int = 200
    grad_clip: float | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.adam = torch.optim.Adam(list(self.params.theta.values()), lr=self.lr, betas=self.betas,
                                     eps=self.eps, weight_decay=0.0)
        self.updates = 0

    def current_lr(self) -> float:
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, (self.updates + 1) / self.warmup)

    def step(self, loss: torch.Tensor) -> None:
        self.adam.zero_grad(set_to_none=True)
        loss.backward()
        if self.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(list(self.params.theta.values()), self.grad_clip)
        for group in self.adam.param_groups:
            group["lr"] = self.current_lr()
        self.adam.step()
        self.updates += 1


def _as_tensors(batch: Transitions, dtype):
    return (
        torch.as_tensor(batch.obs, dtype=dtype),
        torch.as_tensor(batch.action, dtype=torch.int64),
        torch.as_tensor(batch.reward, dtype=dtype),
        torch.as_tensor(batch.next_obs, dtype=dtype),
        torch.as_tensor(batch.begin.astype(np.int64)),
        torch.as_tensor(batch.done, dtype=dtype),
    )


def shifted_next_inputs(obs: np.ndarray, next_obs: np.ndarray, begin: np.ndarray):
    """Per-episode sequences ``(o_0, o'_0, ..., o'_n)`` and where each ``s'_j`` lands.

    Lets the target network condition ``s'_j`` on the whole history including
    ``o_0`` (the alternative to feeding ``(o'_j, b_j)`` directly).
    """
    starts = list(np.flatnonzero(begin)) + [len(begin)]
    ext_obs, ext_begin, pick = [], [], []
    offset = 0
    for s, e in zip(starts[:-1], starts[1:]):
        ext_obs.append(obs[s:s + 1])
        ext_obs.append(next_obs[s:e])
        flags = np.zeros(e - s + 1, dtype=np.int64)
        flags[0] = 1
        ext_begin.append(flags)
        pick.append(offset + 1 + np.arange(e - s))
        offset += e - s + 1
    return np.concatenate(ext_obs), np.concatenate(ext_begin), np.concatenate(pick)


def _targets(q_next, reward, done, gamma, terminal_mask):
    bootstrap = q_next.max(dim=-1).values
    if terminal_mask:
        bootstrap = bootstrap * (1.0 - done)
    return reward + gamma * bootstrap


def tbb_q_loss(params: QPipelineParams, batch: Transitions, gamma: float, terminal_mask: bool = True,
               next_state: str = "literal", obs: torch.Tensor | None = None) -> torch.Tensor:
    """Mean squared TD error over a flat TBB batch.

    ``obs`` may be passed in to take gradients with respect to the observations.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if next_state not in NEXT_STATE_MODES:
        raise ValueError(f"next_state must be one of {NEXT_STATE_MODES}")
    dtype = params.theta["embed.W"].dtype
    o, a, r, o2, b, d = _as_tensors(batch, dtype)
    if obs is not None:
        o = obs
    _, q = forward(params.theta, params.config, o, b)
    with torch.no_grad():
        if next_state == "literal":
            _, q_next = forward(params.phi, params.config, o2, b)
        else:
            ext_o, ext_b, pick = shifted_next_inputs(batch.obs, batch.next_obs, batch.begin)
            _, q_ext = forward(params.phi, params.config, torch.as_tensor(ext_o, dtype=dtype),
                               torch.as_tensor(ext_b))
            q_next = q_ext[torch.as_tensor(pick)]
        y = _targets(q_next, r, d, gamma, terminal_mask)
    q_taken = q.gather(-1, a.unsqueeze(-1)).squeeze(-1)
    return ((q_taken - y) ** 2).mean()


def sbb_q_loss(params: QPipelineParams, rows: SegmentBatch, gamma: float, terminal_mask: bool = True,
               obs: torch.Tensor | None = None) -> torch.Tensor:
    """Masked mean squared TD error over padded segment rows.

    Each row is scanned from the identity; no state or gradient crosses rows.
    """
    rows.validate()
    mask_np = rows.masks.astype(np.float64)
    if mask_np.sum() == 0:
        raise ValueError("batch has no unmasked transitions")
    dtype = params.theta["embed.W"].dtype
    o, a, r, o2, _, d = _as_tensors(rows.segments, dtype)
    if obs is not None:
        o = obs
    # time-major: (L, rows, ...)
    o, a, r, o2, d = (x.transpose(0, 1) for x in (o, a, r, o2, d))
    mask = torch.as_tensor(mask_np, dtype=dtype).transpose(0, 1)
    zero_flags = torch.zeros(o.shape[:-1], dtype=torch.int64)
    _, q = forward(params.theta, params.config, o, zero_flags, resettable=False)
    with torch.no_grad():
        _, q_next = forward(params.phi, params.config, o2, zero_flags, resettable=False)
        y = _targets(q_next, r, d, gamma, terminal_mask)
    q_taken = q.gather(-1, a.unsqueeze(-1)).squeeze(-1)
    return (mask * (q_taken - y) ** 2).sum() / mask.sum()


def tbb_q_update(params: QPipelineParams, batch: Transitions, gamma: float, optimizer: QOptimizer,
                 terminal_mask: bool = True, next_state: str = "literal"):
    """One gradient step on the TBB loss, then the polyak target update."""
    loss = tbb_q_loss(params, batch, gamma, terminal_mask, next_state)
    optimizer.step(loss)
    params.polyak_update()
    return params, float(loss.detach())


def sbb_q_update(params: QPipelineParams, rows: SegmentBatch, gamma: float, optimizer: QOptimizer,
                 terminal_mask: bool = True):
    loss = sbb_q_loss(params, rows, gamma, terminal_mask)
    optimizer.step(loss)
    params.polyak_update()
    return params, float(loss.detach())
