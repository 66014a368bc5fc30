"""Two small card-recall tasks with one-hot observations.

RepeatPrevious(k): at step t the agent must name the card shown at t - k.
RepeatFirst: at every step the agent must name the first card.
Rewards are +/- 1 / (number of scored steps), so episodic returns lie in
[-1, 1] and the optimal return is exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ToyEnvSpec", "CardEnv", "make_env", "TASKS"]

TASKS = ("repeat_previous", "repeat_first")


@dataclass(frozen=True)
class ToyEnvSpec:
    kind: str = "repeat_previous"
    k: int = 1
    episode_length: int = 16
    n_cards: int = 4

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValueError(f"unknown task {self.kind!r}; expected one of {TASKS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.kind == "repeat_previous" and self.episode_length <= self.k:
            raise ValueError("episode_length must exceed k")
        if self.n_cards < 2:
            raise ValueError("n_cards must be >= 2")

    @property
    def scored_steps(self) -> int:
        if self.kind == "repeat_previous":
            return self.episode_length - self.k
        return self.episode_length

    @property
    def random_return(self) -> float:
        """Expected return of a uniformly random policy."""
        p = 1.0 / self.n_cards
        return p - (1.0 - p)


class CardEnv:
    def __init__(self, spec: ToyEnvSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.cards: list[int] = []
        self.t = 0

    @property
    def obs_dim(self) -> int:
        return self.spec.n_cards

    @property
    def n_actions(self) -> int:
        return self.spec.n_cards

    def _obs(self, card: int) -> np.ndarray:
        o = np.zeros(self.spec.n_cards)
        o[card] = 1.0
        return o

    def _draw(self) -> int:
        return int(self.rng.integers(0, self.spec.n_cards))

    def reset(self) -> np.ndarray:
        self.t = 0
        self.cards = [self._draw()]
        return self._obs(self.cards[0])

    def _target(self) -> int | None:
        if self.spec.kind == "repeat_first":
            return self.cards[0]
        if self.t >= self.spec.k:
            return self.cards[self.t - self.spec.k]
        return None

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        target = self._target()
        reward = 0.0
        if target is not None:
            reward = (1.0 if int(action) == target else -1.0) / self.spec.scored_steps
        self.cards.append(self._draw())
        self.t += 1
        done = self.t >= self.spec.episode_length
        return self._obs(self.cards[-1]), reward, done


def make_env(spec: ToyEnvSpec, seed) -> CardEnv:
    return CardEnv(spec, np.random.default_rng(seed))
