"""How much each past observation moves the final Q value of an episode."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .pipeline import PipelineConfig, forward

__all__ = ["SensitivityProfile", "sensitivity_profile", "write_profile_csv"]


@dataclass
class SensitivityProfile:
    """``values[i] = || dQ(s_n, a_n) / d o_i ||_1`` for observation index ``i``.

    ``cumulative[l]`` is the share of the total carried by the ``l + 1`` most
    recent observations (lag 0 is the final step).  When every value is zero
    the profile is ``degenerate`` and ``cumulative`` stays unnormalised zeros.
    """

    values: np.ndarray
    cumulative: np.ndarray
    action: int
    degenerate: bool = False


def sensitivity_profile(tensors: dict[str, torch.Tensor], config: PipelineConfig, obs) -> SensitivityProfile:
    """Gradient of the greedy terminal Q value w.r.t. every observation of one episode."""
    dtype = tensors["embed.W"].dtype
    o = torch.as_tensor(np.asarray(obs), dtype=dtype).clone().requires_grad_(True)
    begins = torch.zeros(o.shape[0], dtype=torch.int64)
    begins[0] = 1
    leaves = {k: v.detach() for k, v in tensors.items()}
    _, q = forward(leaves, config, o, begins)
    action = int(q[-1].argmax())
    (grad,) = torch.autograd.grad(q[-1, action], o)
    values = grad.abs().sum(-1).detach().cpu().numpy().astype(np.float64)
    by_lag = values[::-1]
    total = by_lag.sum()
    if total == 0:
        return SensitivityProfile(values, np.zeros_like(by_lag), action, degenerate=True)
    cumulative = np.cumsum(by_lag) / total
    cumulative[-1] = 1.0
    return SensitivityProfile(values, cumulative, action)


def write_profile_csv(path, profiles: list[SensitivityProfile], rml: int) -> None:
    """One row per (episode, lag); ``rml_marker`` is 1 on the row where lag == rml."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "lag", "obs_index", "sensitivity", "cumulative", "rml_marker", "degenerate"])
        for e, prof in enumerate(profiles):
            n = len(prof.values)
            for lag in range(n):
                i = n - 1 - lag
                w.writerow([e, lag, i, repr(float(prof.values[i])), repr(float(prof.cumulative[lag])),
                            int(lag == rml), int(prof.degenerate)])
