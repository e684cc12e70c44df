from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import approx
from ..replay import PrioritizedBuffer
from .exploration import ExplorationSchedule

ALGORITHMS = ("DDQN", "TD3", "A2C", "PPO")
APPROXIMATORS = ("classical", "quantum")
CHECKPOINT_SCHEMA = "qasforge.agent"


@dataclass
class ReplayConfig:
    capacity: int = 15000
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_increment: float = 1e-3
    epsilon_priority: float = 1e-5

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity: must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha: must lie in [0, 1]")
        if not 0.0 <= self.beta_start <= 1.0:
            raise ValueError("beta_start: must lie in [0, 1]")
        if self.epsilon_priority <= 0:
            raise ValueError("epsilon_priority: must be positive")


@dataclass
class AgentConfig:
    """Hyperparameters shared by all four algorithms.

    ``gamma`` is the discount factor; ``tau`` is the soft target-update rate
    used by TD3.  ``quantum_networks`` lists which networks of a quantum agent
    are circuits ("all" or names such as "q", "actor", "critic").
    """

    algorithm: str = "DDQN"
    approximator: str = "classical"
    gamma: float = 0.99
    lr: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 1000
    learning_starts: int | None = None
    train_every: int = 1
    target_sync_every: int = 50
    tau: float = 5e-3
    hidden: tuple = (30, 30, 30)
    vqc_depth: int = 3
    vqc_qubits: int = 6
    quantum_networks: tuple = ("all",)
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    ppo_epochs: int = 4
    rollout_len: int = 256
    onpolicy_capacity: int = 1024
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.quantum_networks = tuple(self.quantum_networks)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm: expected one of {ALGORITHMS}")
        if self.approximator not in APPROXIMATORS:
            raise ValueError(f"approximator: expected one of {APPROXIMATORS}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma: must lie in (0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps: must lie in (0, 1)")
        if self.policy_delay < 1:
            raise ValueError("policy_delay: must be >= 1")
        if self.lr < 0:
            raise ValueError("lr: must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.train_every < 1:
            raise ValueError("train_every: must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau: must lie in (0, 1]")
        if self.target_sync_every < 1:
            raise ValueError("target_sync_every: must be >= 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda: must lie in [0, 1]")

    @property
    def warmup(self) -> int:
        return self.batch_size if self.learning_starts is None else self.learning_starts


class Agent:
    """Shared plumbing: networks, optimisers, replay and exploration.

    Subclasses implement ``act`` and ``observe``.  ``observe`` receives a
    transition plus ``weight``, the curriculum weight of the task it came from.
    """

    algorithm = None

    def __init__(self, obs_dim, n_actions, config: AgentConfig,
                 exploration: ExplorationSchedule | None = None,
                 replay: ReplayConfig | None = None, rng=None, replay_rng=None,
                 weight_mode: str = "loss"):
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.config = config
        self.schedule = exploration if exploration is not None else ExplorationSchedule()
        self.replay_config = replay if replay is not None else ReplayConfig()
        self.rng = np.random.default_rng(rng)
        self.replay_rng = np.random.default_rng(replay_rng) if replay_rng is not None else self.rng
        if weight_mode not in ("loss", "sampling"):
            raise ValueError("weight_mode must be 'loss' or 'sampling'")
        self.weight_mode = weight_mode
        self.steps = 0
        self.updates = 0
        self.nets = {}
        self.opts = {}

    # -- construction helpers
    def _network(self, name, in_dim, out_dim):
        cfg = self.config
        quantum = cfg.approximator == "quantum" and (
            "all" in cfg.quantum_networks or name in cfg.quantum_networks)
        net = approx.make_network("quantum" if quantum else "classical", in_dim, out_dim,
                                  rng=self.rng, hidden=cfg.hidden, vqc_depth=cfg.vqc_depth,
                                  vqc_qubits=cfg.vqc_qubits)
        self.nets[name] = net
        return net

    def _optimizer(self, name):
        opt = approx.AdamW(self.nets[name].params, lr=self.config.lr,
                           weight_decay=self.config.weight_decay)
        self.opts[name] = opt
        return opt

    def _buffer(self, capacity):
        r = self.replay_config
        return PrioritizedBuffer(capacity, r.alpha, r.beta_start, r.beta_increment,
                                 r.epsilon_priority, rng=self.replay_rng)

    def _push(self, buffer, transition, weight):
        if self.weight_mode == "sampling":
            transition["task_weight"] = 1.0
            return buffer.push(transition, scale=weight)
        transition["task_weight"] = float(weight)
        return buffer.push(transition)

    # -- episode hooks
    @property
    def epsilon(self) -> float:
        return self.schedule.epsilon

    def restart_exploration(self) -> None:
        self.schedule.restart()

    def end_episode(self, episode: int) -> None:
        """Called with the 1-based index of the episode that just finished."""

    # -- checkpoints
    def checkpoint(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA, "version": 1,
            "algorithm": self.algorithm, "config": asdict(self.config),
            "exploration": self.schedule.state_dict(),
            "networks": {k: approx.model_to_json(v) for k, v in self.nets.items()},
        }

    def load_checkpoint(self, d: dict) -> None:
        if d.get("schema") != CHECKPOINT_SCHEMA or d.get("algorithm") != self.algorithm:
            raise ValueError("checkpoint does not match this agent")
        for name, blob in d["networks"].items():
            self.nets[name].set_params(approx.model_from_json(blob).params)
        ex = d["exploration"]
        self.schedule.t, self.schedule.start = ex["t"], ex["start"]


def soft_update(target, online, tau):
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o


def one_hot(indices, n):
    out = np.zeros((len(indices), n))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def masked_softmax(logits, mask):
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
