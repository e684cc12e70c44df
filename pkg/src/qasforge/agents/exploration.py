"""Epsilon-greedy exploration with exponential decay and restarts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ExplorationSchedule:
    """epsilon_t = max(epsilon_min, start * epsilon_decay ** t).

    ``t`` counts action selections since the last restart; a restart resets
    ``t`` and sets ``start`` to ``restart_value``.
    """

    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.99995
    restart_value: float = 1.0
    t: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_min <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1]")
        self.start = self.epsilon_start

    @property
    def epsilon(self) -> float:
        return max(self.epsilon_min, self.start * self.epsilon_decay ** self.t)

    def advance(self) -> float:
        self.t += 1
        return self.epsilon

    def restart(self) -> None:
        self.start = self.restart_value
        self.t = 0

    def state_dict(self) -> dict:
        return {"epsilon_start": self.epsilon_start, "epsilon_min": self.epsilon_min,
                "epsilon_decay": self.epsilon_decay, "restart_value": self.restart_value,
                "t": self.t, "start": self.start}


def masked_argmax(values, legal) -> int:
    """Argmax over legal entries; ties go to the lowest index."""
    legal = np.asarray(legal, dtype=bool)
    if not legal.any():
        raise ValueError("no legal action")
    v = np.where(legal, np.asarray(values, dtype=float), -np.inf)
    return int(np.argmax(v))


def select_action(values, legal, schedule: ExplorationSchedule, rng: np.random.Generator,
                  probs=None) -> int:
    """Epsilon-greedy choice, then one decay step of ``schedule``.

    With probability epsilon the action is uniform over legal entries.
    Otherwise it is the masked argmax of ``values``, or a draw from ``probs``
    when a stochastic policy supplies them.
    """
    legal = np.asarray(legal, dtype=bool)
    choices = np.flatnonzero(legal)
    if choices.size == 0:
        raise ValueError("no legal action")
    if rng.random() < schedule.epsilon:
        a = int(rng.choice(choices))
    elif probs is not None:
        p = np.where(legal, probs, 0.0)
        a = int(rng.choice(len(p), p=p / p.sum()))
    else:
        a = masked_argmax(values, legal)
    schedule.advance()
    return a
