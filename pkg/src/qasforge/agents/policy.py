"""A2C and PPO with prioritized replay of recent rollouts."""
from __future__ import annotations

import numpy as np

from .base import Agent, masked_softmax
from .exploration import select_action


def gae(rewards, values, gamma, lam):
    """Generalized advantage estimates by backward recursion.

    ``values`` has one more entry than ``rewards``; the last is the bootstrap
    value of the state after the final reward (0 for a terminal state).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (len(r) + 1,):
        raise ValueError("values must have exactly one more entry than rewards")
    delta = r + gamma * v[1:] - v[:-1]
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def ppo_surrogate(ratio, advantages, clip_eps):
    """Per-sample min(r A, clip(r, 1 - eps, 1 + eps) A)."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - clip_eps, 1 + clip_eps) * adv)


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    if adv.size < 2:
        return adv - adv.mean() if adv.size else adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_loss(old_logprobs, new_logprobs, advantages, clip_eps, values, returns,
             entropy_coef=0.01, entropy=None, value_coef=0.5, normalize=True, weights=None):
    """Clipped surrogate loss plus value regression minus an entropy bonus.

    Returns a dict with the ``policy``, ``value``, ``entropy`` and ``total`` terms.
    """
    old = np.asarray(old_logprobs, dtype=float)
    new = np.asarray(new_logprobs, dtype=float)
    n = len(old)
    if not (len(new) == len(advantages) == len(values) == len(returns) == n):
        raise ValueError("length mismatch")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    with np.errstate(over="ignore"):
        ratio = np.exp(new - old)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError("non-finite probability ratio")
    adv = normalize_advantages(advantages) if normalize else np.asarray(advantages, dtype=float)
    policy = -float(np.mean(w * ppo_surrogate(ratio, adv, clip_eps)))
    value = float(np.mean(w * (np.asarray(values) - np.asarray(returns)) ** 2))
    ent = 0.0 if entropy is None else float(np.mean(w * np.asarray(entropy)))
    total = policy + value_coef * value - entropy_coef * ent
    return {"policy": policy, "value": value, "entropy": ent, "total": total}


def a2c_loss(logprobs, advantages, values, returns, weights=None):
    lp = np.asarray(logprobs, dtype=float)
    n = len(lp)
    if not (len(advantages) == len(values) == len(returns) == n):
        raise ValueError("length mismatch")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    actor = -float(np.mean(w * lp * np.asarray(advantages, dtype=float)))
    critic = float(np.mean(w * (np.asarray(values, dtype=float) - np.asarray(returns)) ** 2))
    return {"actor_loss": actor, "critic_loss": critic, "total": actor + critic}


def _log_policy(logits, mask):
    p = masked_softmax(logits, mask)
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return p, logp


class _PolicyAgent(Agent):
    """Actor over masked logits plus a state-value critic.

    Episodes are buffered until they end, then scored with GAE and pushed
    into a prioritized buffer of recent rollouts.  Every ``rollout_len``
    environment steps the agent runs ``epochs`` prioritized minibatch updates
    with importance weights folded into the loss.
    """

    lam = 0.0
    epochs = 1

    def __init__(self, obs_dim, n_actions, config, **kw):
        super().__init__(obs_dim, n_actions, config, **kw)
        self.actor = self._network("actor", obs_dim, n_actions)
        self.critic = self._network("critic", obs_dim, 1)
        self._optimizer("actor")
        self._optimizer("critic")
        self.buffer = self._buffer(config.onpolicy_capacity)
        self._episode = []

    def act(self, obs, mask):
        probs = masked_softmax(self.actor.predict(obs), np.asarray(mask, dtype=bool))
        return select_action(probs, mask, self.schedule, self.rng, probs=probs)

    def observe(self, obs, action, reward, next_obs, done, next_mask, weight=1.0, mask=None):
        if mask is None:
            mask = np.ones(self.n_actions, dtype=bool)
        self._episode.append((obs, action, reward, next_obs, done, mask, weight))
        self.steps += 1
        if done:
            self._flush_episode()
        if self.steps % self.config.rollout_len == 0 and len(self.buffer) > 0:
            return self.learn()
        return None

    def _flush_episode(self):
        ep, self._episode = self._episode, []
        obs = np.array([e[0] for e in ep])
        last = ep[-1]
        v = self.critic.predict(obs)[:, 0]
        bootstrap = 0.0 if last[4] else float(self.critic.predict(last[3])[0])
        values = np.append(v, bootstrap)
        rewards = np.array([e[2] for e in ep], dtype=float)
        adv = gae(rewards, values, self.config.gamma, self.lam)
        returns = adv + v
        probs, logp = _log_policy(self.actor.predict(obs), np.array([e[5] for e in ep]))
        for t, (o, a, _, _, _, m, wgt) in enumerate(ep):
            self._push(self.buffer, {"obs": o, "action": a, "mask": m,
                                     "old_logprob": logp[t, a], "advantage": adv[t],
                                     "ret": returns[t]}, wgt)

    def learn(self):
        out = None
        for _ in range(self.epochs):
            batch = self.buffer.sample(min(self.config.batch_size, len(self.buffer)))
            out = self._update(batch)
            self.buffer.update_priorities(batch.indices, out["td_errors"])
            self.updates += 1
        return out

    def _update(self, batch):
        tr = batch.transitions
        w = np.asarray(batch.is_weights, dtype=float) * tr["task_weight"]
        obs, a, mask = tr["obs"], tr["action"].astype(int), tr["mask"].astype(bool)
        n = len(a)
        rows = np.arange(n)
        logits, a_tape = self.actor.forward(obs)
        probs, logp = _log_policy(logits, mask)
        v, c_tape = self.critic.forward(obs)
        v = v[:, 0]
        losses, dlogp, dent = self._losses(tr, logp[rows, a], probs, logp, v, w)
        if not np.isfinite(losses["total"]):
            raise FloatingPointError("non-finite policy loss")
        onehot = np.zeros_like(probs)
        onehot[rows, a] = 1.0
        dlogits = dlogp[:, None] * (onehot - probs)
        if dent is not None:
            ent = -np.sum(probs * logp, axis=1, keepdims=True)
            dlogits += dent[:, None] * (-probs * (logp + ent))
        dlogits = np.where(mask, dlogits, 0.0)
        self.opts["actor"].step(self.actor.params, self.actor.backward(a_tape, dlogits))
        dv = (self._value_scale * 2.0 * w * (v - tr["ret"]) / n)[:, None]
        self.opts["critic"].step(self.critic.params, self.critic.backward(c_tape, dv))
        losses["td_errors"] = np.abs(v - tr["ret"])
        return losses


class A2CAgent(_PolicyAgent):
    algorithm = "A2C"
    lam = 0.0
    epochs = 1
    _value_scale = 1.0

    def _losses(self, tr, new_lp, probs, logp, v, w):
        adv = tr["advantage"]
        out = a2c_loss(new_lp, adv, v, tr["ret"], weights=w)
        return out, -w * adv / len(adv), None


class PPOAgent(_PolicyAgent):
    algorithm = "PPO"

    def __init__(self, obs_dim, n_actions, config, **kw):
        self.lam = config.gae_lambda
        self.epochs = config.ppo_epochs
        self._value_scale = config.value_coef
        super().__init__(obs_dim, n_actions, config, **kw)

    def _losses(self, tr, new_lp, probs, logp, v, w):
        cfg = self.config
        n = len(new_lp)
        ent = -np.sum(probs * logp, axis=1)
        out = ppo_loss(tr["old_logprob"], new_lp, tr["advantage"], cfg.clip_eps, v, tr["ret"],
                       cfg.entropy_coef, entropy=ent, value_coef=cfg.value_coef, weights=w)
        adv = normalize_advantages(tr["advantage"])
        ratio = np.exp(new_lp - tr["old_logprob"])
        clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps)
        active = ratio * adv <= clipped * adv
        dlogp = np.where(active, -w * adv * ratio / n, 0.0)
        return out, dlogp, -cfg.entropy_coef * w / n
