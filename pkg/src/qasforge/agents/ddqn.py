"""Double DQN on prioritized replay."""
from __future__ import annotations

import numpy as np

from .base import Agent
from .exploration import select_action


def ddqn_target(reward, next_obs, online, target_net, gamma, done, next_mask=None):
    """y = r + gamma * Q_target(s', argmax_a Q_online(s', a)), or r when done.

    Works on single transitions or batches; the argmax is restricted to
    ``next_mask`` when given.
    """
    single = np.ndim(reward) == 0
    r = np.atleast_1d(np.asarray(reward, dtype=float))
    d = np.atleast_1d(np.asarray(done, dtype=float))
    s2 = np.asarray(next_obs, dtype=float).reshape(len(r), -1)
    q_online = online.predict(s2)
    q_target = target_net.predict(s2)
    if q_online.shape != q_target.shape:
        raise ValueError("online and target networks disagree on output shape")
    if next_mask is not None:
        mask = np.asarray(next_mask, dtype=bool).reshape(q_online.shape)
        q_online = np.where(mask, q_online, -np.inf)
    best = np.argmax(q_online, axis=1)
    y = r + gamma * (1.0 - d) * q_target[np.arange(len(r)), best]
    return float(y[0]) if single else y


def ddqn_train_step(batch, online, target_net, opt, gamma):
    """One importance-weighted regression step of Q_online toward the DDQN target.

    Returns the weighted squared-error loss and per-transition |TD error|.
    """
    tr = batch.transitions
    w = np.asarray(batch.is_weights, dtype=float) * tr.get("task_weight", 1.0)
    a = tr["action"].astype(int)
    y = ddqn_target(tr["reward"], tr["next_obs"], online, target_net, gamma, tr["done"],
                    tr.get("next_mask"))
    q, tape = online.forward(tr["obs"])
    rows = np.arange(len(a))
    delta = q[rows, a] - y
    loss = float(np.mean(w * delta**2))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite DDQN loss")
    dq = np.zeros_like(q)
    dq[rows, a] = 2.0 * w * delta / len(a)
    opt.step(online.params, online.backward(tape, dq))
    return {"loss": loss, "td_errors": np.abs(delta)}


def sync_target(online, target_net, episode, every=50) -> bool:
    """Hard-copy online parameters into the target every ``every`` episodes."""
    if episode > 0 and episode % every == 0:
        target_net.set_params(online.params)
        return True
    return False


class DDQNAgent(Agent):
    algorithm = "DDQN"

    def __init__(self, obs_dim, n_actions, config, **kw):
        super().__init__(obs_dim, n_actions, config, **kw)
        self.online = self._network("q", obs_dim, n_actions)
        self.target = self.online.copy()
        self._optimizer("q")
        self.buffer = self._buffer(self.replay_config.capacity)

    def q_values(self, obs):
        return self.online.predict(obs)

    def act(self, obs, mask):
        return select_action(self.online.predict(obs), mask, self.schedule, self.rng)

    def observe(self, obs, action, reward, next_obs, done, next_mask, weight=1.0, mask=None):
        self._push(self.buffer, {
            "obs": obs, "action": action, "reward": reward, "next_obs": next_obs,
            "done": float(done), "next_mask": next_mask}, weight)
        self.steps += 1
        cfg = self.config
        if len(self.buffer) >= max(cfg.warmup, cfg.batch_size) and self.steps % cfg.train_every == 0:
            batch = self.buffer.sample(cfg.batch_size)
            out = ddqn_train_step(batch, self.online, self.target, self.opts["q"], cfg.gamma)
            self.buffer.update_priorities(batch.indices, out["td_errors"])
            self.updates += 1
            return out
        return None

    def end_episode(self, episode):
        sync_target(self.online, self.target, episode, self.config.target_sync_every)
        self.buffer.anneal_beta()
