"""TD3 bridged to a discrete gate alphabet.

The actor emits a softmax over actions; the executed action is its masked
argmax (wrapped in epsilon-greedy).  Critics read ``[obs, action_vector]``
where executed and target actions are one-hot vectors and the actor update
feeds the actor's softmax output.
"""
from __future__ import annotations

import numpy as np

from .base import Agent, masked_softmax, one_hot, soft_update
from .exploration import masked_argmax, select_action


def discretize_td3_action(actor_output, legal) -> int:
    return masked_argmax(actor_output, legal)


def clipped_noise(rng, shape, sigma, clip):
    """Gaussian target-policy noise clamped to [-clip, clip]."""
    if sigma == 0:
        return np.zeros(shape)
    return np.clip(rng.normal(0.0, sigma, size=shape), -clip, clip)


def td3_target(reward, q1_next, q2_next, gamma, done):
    """r + gamma * min(Q'_1, Q'_2) for non-terminal transitions."""
    q = np.minimum(q1_next, q2_next)
    return np.asarray(reward, dtype=float) + gamma * (1.0 - np.asarray(done, dtype=float)) * q


def _softmax(logits):
    return masked_softmax(logits, np.ones_like(logits, dtype=bool))


def td3_train_step(batch, actor, critics, targets, opts, config, rng, update_index):
    """Twin-critic regression plus a delayed actor step.

    ``targets`` holds ``(actor', critic1', critic2')``; ``opts`` maps "actor",
    "critic1", "critic2" to optimisers.  The actor and all targets move only
    when ``update_index`` is a multiple of ``config.policy_delay``.
    """
    tr = batch.transitions
    w = np.asarray(batch.is_weights, dtype=float) * tr.get("task_weight", 1.0)
    obs, nxt = tr["obs"], tr["next_obs"]
    a = tr["action"].astype(int)
    n_actions = actor.out_dim
    b = len(a)
    actor_t, critic1_t, critic2_t = targets

    next_probs = _softmax(actor_t.predict(nxt))
    noisy = next_probs + clipped_noise(rng, next_probs.shape, config.policy_noise, config.noise_clip)
    mask = tr.get("next_mask", np.ones_like(noisy, dtype=bool)).astype(bool)
    safe = mask.any(axis=1)
    mask = np.where(safe[:, None], mask, True)
    next_a = np.argmax(np.where(mask, noisy, -np.inf), axis=1)
    next_in = np.hstack([nxt, one_hot(next_a, n_actions)])
    y = td3_target(tr["reward"], critic1_t.predict(next_in)[:, 0],
                   critic2_t.predict(next_in)[:, 0], config.gamma, tr["done"])

    cur_in = np.hstack([obs, one_hot(a, n_actions)])
    out = {}
    for i, (critic, name) in enumerate(zip(critics, ("critic1", "critic2"))):
        q, tape = critic.forward(cur_in)
        delta = q[:, 0] - y
        loss = float(np.mean(w * delta**2))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite TD3 critic loss")
        dq = (2.0 * w * delta / b)[:, None]
        opts[name].step(critic.params, critic.backward(tape, dq))
        out[f"{name}_loss"] = loss
        if i == 0:
            out["td_errors"] = np.abs(delta)
    out["critic_loss"] = out["critic1_loss"] + out["critic2_loss"]

    if update_index % config.policy_delay == 0:
        logits, a_tape = actor.forward(obs)
        probs = _softmax(logits)
        q, c_tape = critics[0].forward(np.hstack([obs, probs]))
        actor_loss = -float(np.mean(w * q[:, 0]))
        if not np.isfinite(actor_loss):
            raise FloatingPointError("non-finite TD3 actor loss")
        _, dx = critics[0].backward(c_tape, (-w / b)[:, None], input_grad=True)
        dp = dx[:, obs.shape[1]:]
        dlogits = probs * (dp - np.sum(dp * probs, axis=1, keepdims=True))
        opts["actor"].step(actor.params, actor.backward(a_tape, dlogits))
        for t, o in zip(targets, (actor, *critics)):
            soft_update(t, o, config.tau)
        out["actor_loss"] = actor_loss
    return out


class TD3Agent(Agent):
    algorithm = "TD3"

    def __init__(self, obs_dim, n_actions, config, **kw):
        super().__init__(obs_dim, n_actions, config, **kw)
        self.actor = self._network("actor", obs_dim, n_actions)
        self.critic1 = self._network("critic1", obs_dim + n_actions, 1)
        self.critic2 = self._network("critic2", obs_dim + n_actions, 1)
        for name in ("actor", "critic1", "critic2"):
            self._optimizer(name)
        self.targets = (self.actor.copy(), self.critic1.copy(), self.critic2.copy())
        self.buffer = self._buffer(self.replay_config.capacity)

    def act(self, obs, mask):
        return select_action(_softmax(self.actor.predict(obs)), mask, self.schedule, self.rng)

    def observe(self, obs, action, reward, next_obs, done, next_mask, weight=1.0, mask=None):
        self._push(self.buffer, {
            "obs": obs, "action": action, "reward": reward, "next_obs": next_obs,
            "done": float(done), "next_mask": next_mask}, weight)
        self.steps += 1
        cfg = self.config
        if len(self.buffer) >= max(cfg.warmup, cfg.batch_size) and self.steps % cfg.train_every == 0:
            batch = self.buffer.sample(cfg.batch_size)
            self.updates += 1
            out = td3_train_step(batch, self.actor, (self.critic1, self.critic2), self.targets,
                                 self.opts, cfg, self.rng, self.updates)
            self.buffer.update_priorities(batch.indices, out["td_errors"])
            return out
        return None

    def end_episode(self, episode):
        self.buffer.anneal_beta()
