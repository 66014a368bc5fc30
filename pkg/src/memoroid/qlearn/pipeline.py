"""Embedding -> memoroid -> Q head, as pure functions of a dict of tensors.

Layout of the parameter dict::

    embed.W, embed.b        linear block on the raw observation
    mem.<name>              parameters of one model memoroid
    post0.W, post0.b        two linear blocks on the Markov state
    post1.W, post1.b
    head.W, head.b          linear map to one Q value per action

A block is linear -> non-parametric layer norm -> leaky ReLU.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..core import MemoroidDefinition, PartialTransition, apply_batched, step
from ..models import MODEL_KINDS, build_memoroid, init_params

__all__ = [
    "PipelineConfig",
    "QPipelineParams",
    "init_pipeline",
    "forward",
    "q_forward",
    "backward",
    "RecurrentPolicy",
    "memory_tensors",
]


@dataclass(frozen=True)
class PipelineConfig:
    model: str
    obs_dim: int
    n_actions: int
    hidden: int = 32
    memory: int = 16
    context: int = 4

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)


def _linear(gen, out_dim, in_dim, dtype):
    s = 1.0 / np.sqrt(in_dim)
    W = (torch.rand((out_dim, in_dim), generator=gen, dtype=dtype) * 2 - 1) * s
    b = (torch.rand((out_dim,), generator=gen, dtype=dtype) * 2 - 1) * s
    return W, b


def init_pipeline(config: PipelineConfig, gen: torch.Generator, dtype=torch.float64) -> dict[str, torch.Tensor]:
    h = config.hidden
    theta = {}
    theta["embed.W"], theta["embed.b"] = _linear(gen, h, config.obs_dim, dtype)
    mem = init_params(config.model, gen, d_o=h, m=config.memory, c=config.context, d_s=h, dtype=dtype)
    theta.update({f"mem.{k}": v for k, v in mem.tensors().items()})
    theta["post0.W"], theta["post0.b"] = _linear(gen, h, h, dtype)
    theta["post1.W"], theta["post1.b"] = _linear(gen, h, h, dtype)
    theta["head.W"], theta["head.b"] = _linear(gen, config.n_actions, h, dtype)
    return theta


def memory_tensors(tensors: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {k[4:]: v for k, v in tensors.items() if k.startswith("mem.")}


def _block(x, tensors, name):
    z = F.linear(x, tensors[f"{name}.W"], tensors[f"{name}.b"])
    return F.leaky_relu(F.layer_norm(z, z.shape[-1:]))


def embed(tensors, obs):
    return _block(obs, tensors, "embed")


def head(tensors, markov):
    y = _block(_block(markov, tensors, "post0"), tensors, "post1")
    return F.linear(y, tensors["head.W"], tensors["head.b"])


def _check_inputs(config, obs, begins):
    if obs.shape[-1] != config.obs_dim:
        raise ValueError(f"observation width {obs.shape[-1]} does not match obs_dim {config.obs_dim}")
    if tuple(begins.shape) != tuple(obs.shape[:-1]):
        raise ValueError(f"begin flags of shape {tuple(begins.shape)} do not match observations {tuple(obs.shape)}")
    if obs.shape[0] == 0:
        raise ValueError("empty sequence")


def forward(tensors: dict[str, torch.Tensor], config: PipelineConfig, obs: torch.Tensor,
            begins: torch.Tensor, resettable: bool = True, memoroid: MemoroidDefinition | None = None):
    """Markov states and Q values for a time-major sequence.

    ``obs`` is ``(T, ..., obs_dim)``.  With ``resettable=True`` the begin flags
    split the sequence into independent episodes (TBB); with ``False`` every
    column is scanned from the identity as one fragment (SBB rows).
    """
    _check_inputs(config, obs, begins)
    if resettable and not bool((begins[0] == 1).all()):
        raise ValueError("sequence must start an episode (b = 1 at position 0)")
    mem = memoroid or build_memoroid(config.model, memory_tensors(tensors))
    z = embed(tensors, obs)
    _, markov = apply_batched(mem, PartialTransition(z, begins), resettable=resettable)
    return markov, head(tensors, markov)


@dataclass
class QPipelineParams:
    """Online parameters ``theta``, target copy ``phi`` and polyak rate ``beta``."""

    config: PipelineConfig
    theta: dict[str, torch.Tensor]
    phi: dict[str, torch.Tensor]
    beta: float = 0.995

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.theta.keys() != self.phi.keys() or any(
            self.theta[k].shape != self.phi[k].shape for k in self.theta
        ):
            raise ValueError("theta and phi must have identical structure")

    @classmethod
    def create(cls, config: PipelineConfig, seed: int, beta: float = 0.995, dtype=torch.float64):
        gen = torch.Generator().manual_seed(seed)
        theta = {k: v.requires_grad_(True) for k, v in init_pipeline(config, gen, dtype).items()}
        phi = {k: v.detach().clone() for k, v in theta.items()}
        return cls(config, theta, phi, beta)

    def tensors(self, use_target: bool = False) -> dict[str, torch.Tensor]:
        return self.phi if use_target else self.theta

    @torch.no_grad()
    def polyak_update(self) -> None:
        """``phi <- beta * phi + (1 - beta) * theta``."""
        for k, p in self.phi.items():
            p.mul_(self.beta).add_(self.theta[k].detach(), alpha=1.0 - self.beta)

    def clone(self) -> "QPipelineParams":
        theta = {k: v.detach().clone().requires_grad_(True) for k, v in self.theta.items()}
        return QPipelineParams(self.config, theta, copy.deepcopy(self.phi), self.beta)


def q_forward(params: QPipelineParams, ps: PartialTransition, use_target: bool = False,
              resettable: bool = True):
    return forward(params.tensors(use_target), params.config, ps.o, ps.b, resettable=resettable)


def backward(tensors: dict[str, torch.Tensor], config: PipelineConfig, obs: torch.Tensor,
             begins: torch.Tensor, adjoint: torch.Tensor, resettable: bool = True):
    """Reverse-mode gradients of ``<adjoint, Q>`` w.r.t. every parameter and the observations.

    Returns ``(param_grads, obs_grad)``.
    """
    leaves = {k: v.detach().clone().requires_grad_(True) for k, v in tensors.items()}
    obs = obs.detach().clone().requires_grad_(True)
    _, q = forward(leaves, config, obs, begins, resettable=resettable)
    names = list(leaves)
    grads = torch.autograd.grad(q, [leaves[k] for k in names] + [obs], grad_outputs=adjoint,
                                allow_unused=True)
    param_grads = {k: (g if g is not None else torch.zeros_like(leaves[k])) for k, g in zip(names, grads)}
    return param_grads, grads[-1]


class RecurrentPolicy:
    """Step-at-a-time Q values for rollouts; state resets on ``begin``."""

    def __init__(self, tensors: dict[str, torch.Tensor], config: PipelineConfig):
        self.tensors = {k: v.detach() for k, v in tensors.items()}
        self.config = config
        self.memoroid = build_memoroid(config.model, memory_tensors(self.tensors))
        self.h = None
        self.dtype = self.tensors["embed.W"].dtype

    def reset(self):
        self.h = None

    @torch.no_grad()
    def q_values(self, obs: np.ndarray, begin: int) -> torch.Tensor:
        o = torch.as_tensor(obs, dtype=self.dtype)
        z = embed(self.tensors, o)
        self.h, s = step(self.memoroid, self.h, PartialTransition(z, int(begin)))
        return head(self.tensors, s)
