import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qasforge import agents as G
from qasforge.approx import AdamW, Mlp
from qasforge.replay import SampledBatch


def linear(w, b):
    m = Mlp((len(w), len(w[0])), activation="identity")
    m.set_params([np.array(w, dtype=float), np.array(b, dtype=float)])
    return m


# --- exploration ---------------------------------------------------------------

def test_greedy_choice():
    s = G.ExplorationSchedule(0.0, 0.0)
    assert G.select_action([1, 5, 2], [True] * 3, s, np.random.default_rng(0)) == 1
    assert G.select_action([1, 5, 2], [True, False, True], s, np.random.default_rng(0)) == 2
    assert G.masked_argmax([3, 3, 1], [True] * 3) == 0


def test_uniform_exploration_frequencies():
    s = G.ExplorationSchedule(1.0, 1.0, 1.0)
    rng = np.random.default_rng(0)
    legal = [True, False, True, True, True]
    counts = np.bincount([G.select_action(np.zeros(5), legal, s, rng) for _ in range(100_000)],
                         minlength=5)
    assert counts[1] == 0
    assert np.all(np.abs(counts[[0, 2, 3, 4]] / 1e5 - 0.25) < 0.01)


def test_epsilon_after_ten_thousand_steps():
    s = G.ExplorationSchedule()
    s.t = 10_000
    assert s.epsilon == pytest.approx(math.exp(10_000 * math.log(0.99995)))
    assert s.epsilon == pytest.approx(0.6065, abs=1e-4)


def test_epsilon_monotone_and_restart():
    s = G.ExplorationSchedule(epsilon_decay=0.99)
    seq = [s.advance() for _ in range(1000)]
    assert all(a >= b for a, b in zip(seq, seq[1:])) and min(seq) == 0.05
    s.restart()
    assert s.epsilon == 1.0


def test_no_legal_action():
    with pytest.raises(ValueError):
        G.select_action([1, 2], [False, False], G.ExplorationSchedule(), np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=1, max_size=12), st.integers(1, 50), st.integers(-50, 50))
def test_greedy_affine_invariance(values, scale, shift):
    s = G.ExplorationSchedule(0.0, 0.0)
    v = np.array(values, dtype=float)
    legal = np.ones(len(v), dtype=bool)
    a = G.select_action(v, legal, s, np.random.default_rng(0))
    b = G.select_action(v * scale + shift, legal, s, np.random.default_rng(0))
    assert v[a] == v[b]


# --- ddqn ----------------------------------------------------------------------

def test_ddqn_target_examples():
    online = linear([[1.0, 3.0]], [0, 0])
    target = linear([[2.0, 0.5]], [0, 0])
    assert G.ddqn_target(1.0, [1.0], online, target, 0.9, False) == pytest.approx(1.45)
    assert G.ddqn_target(1.0, [1.0], online, target, 0.9, True) == 1.0
    # with the second action illegal the argmax falls back to action 0
    assert G.ddqn_target(1.0, [1.0], online, target, 0.9, False, [True, False]) == pytest.approx(2.8)
    with pytest.raises(ValueError):
        G.ddqn_target(1.0, [1.0], online, linear([[1.0]], [0]), 0.9, False)


def test_ddqn_target_equals_q_learning_when_nets_match(rng):
    net = Mlp((3, 4, 2), rng=0)
    s2 = rng.normal(size=(6, 3))
    r = rng.normal(size=6)
    y = G.ddqn_target(r, s2, net, net, 0.9, np.zeros(6))
    assert np.allclose(y, r + 0.9 * net.predict(s2).max(axis=1))


def one_step_batch(q_value, reward, weight=1.0):
    tr = {"obs": np.array([[1.0]]), "action": np.array([0]), "reward": np.array([reward]),
          "next_obs": np.array([[0.0]]), "done": np.array([1.0])}
    return SampledBatch(tr, np.array([0]), np.array([weight]))


def test_ddqn_train_step_examples():
    net = linear([[1.0, 0.0]], [0, 0])
    opt = AdamW(net.params, lr=0.0, weight_decay=0.0)
    out = G.ddqn_train_step(one_step_batch(1.0, 1.45), net, net.copy(), opt, 0.9)
    assert out["loss"] == pytest.approx(0.2025) and out["td_errors"][0] == pytest.approx(0.45)
    out2 = G.ddqn_train_step(one_step_batch(1.0, 1.45, 2.0), net, net.copy(), opt, 0.9)
    assert out2["loss"] == pytest.approx(0.405) and out2["td_errors"][0] == pytest.approx(0.45)
    out3 = G.ddqn_train_step(one_step_batch(1.0, 1.0), net, net.copy(), opt, 0.9)
    assert out3["loss"] == 0.0 and out3["td_errors"][0] == 0.0


def test_sync_target_schedule():
    online, target = Mlp((2, 3), rng=0), Mlp((2, 3), rng=1)
    before = [p.copy() for p in target.params]
    assert not G.sync_target(online, target, 49)
    assert all(np.array_equal(a, b) for a, b in zip(before, target.params))
    assert G.sync_target(online, target, 50)
    assert all(np.array_equal(a, b) for a, b in zip(online.params, target.params))
    online.params[0] += 1
    assert G.sync_target(online, target, 100)
    assert all(np.array_equal(a, b) for a, b in zip(online.params, target.params))


def value_iteration(P, R, D, gamma, iters=2000):
    q = np.zeros(R.shape)
    for _ in range(iters):
        q = R + gamma * (1 - D) * q.max(axis=1)[P]
    return q


def test_ddqn_converges_on_tabular_mdp():
    # 3 states, 2 actions, deterministic; terminal transitions flagged in D
    P = np.array([[1, 2], [0, 2], [0, 0]])
    R = np.array([[0.0, 1.0], [0.0, 2.0], [0.5, 0.5]])
    D = np.array([[0, 1], [0, 1], [0, 0]], dtype=float)
    gamma = 0.9
    q_star = value_iteration(P, R, D, gamma)

    eye = np.eye(3)
    s, a = np.divmod(np.arange(6), 2)
    tr = {"obs": eye[s], "action": a, "reward": R[s, a], "next_obs": eye[P[s, a]], "done": D[s, a]}
    batch = SampledBatch(tr, np.arange(6), np.ones(6))
    online = linear(np.zeros((3, 2)), np.zeros(2))
    target = online.copy()
    opt = AdamW(online.params, lr=0.02, weight_decay=0.0)
    for step in range(1, 6001):
        G.ddqn_train_step(batch, online, target, opt, gamma)
        G.sync_target(online, target, step, every=25)
    assert np.max(np.abs(online.predict(eye) - q_star)) < 0.05


# --- td3 -----------------------------------------------------------------------

def test_td3_target_min():
    assert G.td3_target(0.0, 2.0, 1.5, 1.0, 0.0) == 1.5
    assert G.td3_target(1.0, 2.0, 1.5, 0.9, 1.0) == 1.0


def test_td3_target_min_property(rng):
    for _ in range(1000):
        r, q1, q2 = rng.normal(size=3)
        y = G.td3_target(r, q1, q2, 0.99, 0.0)
        assert y <= G.td3_target(r, q1, q1, 0.99, 0.0) and y <= G.td3_target(r, q2, q2, 0.99, 0.0)


class ConstNormal:
    def normal(self, loc, scale, size):
        return np.full(size, 0.9)


def test_clipped_noise():
    assert np.all(G.clipped_noise(ConstNormal(), (3,), 0.2, 0.5) == 0.5)
    assert np.all(G.clipped_noise(None, (2,), 0.0, 0.5) == 0.0)


def test_discretize_examples():
    assert G.discretize_td3_action([0.1, 0.9], [True, True]) == 1
    assert G.discretize_td3_action([0.1, 0.9, 0.5], [True, False, True]) == 2
    assert G.discretize_td3_action(np.array([0.1, 0.9]) + 7.0, [True, True]) == 1


def td3_parts(seed=0):
    cfg = G.AgentConfig(algorithm="TD3", policy_noise=0.0, policy_delay=1, lr=1e-2,
                        weight_decay=0.0, hidden=(8,))
    agent = G.TD3Agent(2, 3, cfg, rng=seed)
    return cfg, agent


def test_td3_train_step_runs_and_updates():
    cfg, agent = td3_parts()
    b = 5
    rng = np.random.default_rng(1)
    tr = {"obs": rng.normal(size=(b, 2)), "action": rng.integers(0, 3, b),
          "reward": rng.normal(size=b), "next_obs": rng.normal(size=(b, 2)), "done": np.zeros(b),
          "next_mask": np.ones((b, 3), dtype=bool)}
    before = [p.copy() for p in agent.targets[0].params]
    actor_before = [p.copy() for p in agent.actor.params]
    out = G.td3_train_step(SampledBatch(tr, np.arange(b), np.ones(b)), agent.actor,
                           (agent.critic1, agent.critic2), agent.targets, agent.opts, cfg,
                           agent.rng, 1)
    assert {"critic_loss", "actor_loss", "td_errors"} <= set(out)
    assert any(not np.array_equal(a, p) for a, p in zip(actor_before, agent.actor.params))
    assert any(not np.array_equal(a, p) for a, p in zip(before, agent.targets[0].params))
    cfg.policy_delay = 2
    out = G.td3_train_step(SampledBatch(tr, np.arange(b), np.ones(b)), agent.actor,
                           (agent.critic1, agent.critic2), agent.targets, agent.opts, cfg,
                           agent.rng, 3)
    assert "actor_loss" not in out


# --- policy gradient -----------------------------------------------------------

def test_gae_examples():
    assert np.allclose(G.gae([1, 1], [0.5, 0.5, 0], 0.9, 0.95), [1.3775, 0.5])
    r, v = np.array([0.3, -1.0, 2.0]), np.array([0.1, 0.4, -0.2, 0.7])
    assert np.allclose(G.gae(r, v, 0.9, 0.0), r + 0.9 * v[1:] - v[:-1])
    assert np.allclose(G.gae(np.zeros(4), [1, 1, 1, 1, 0], 1.0, 0.0), [0, 0, 0, -1])
    with pytest.raises(ValueError):
        G.gae([1, 1], [0, 0], 0.9, 0.9)


def test_gae_matches_double_sum(rng):
    for _ in range(50):
        n = int(rng.integers(1, 51))
        r, v = rng.normal(size=n), rng.normal(size=n + 1)
        gamma, lam = rng.uniform(0.5, 1), rng.uniform(0, 1)
        delta = r + gamma * v[1:] - v[:-1]
        brute = [sum((gamma * lam) ** k * delta[t + k] for k in range(n - t)) for t in range(n)]
        assert np.max(np.abs(G.gae(r, v, gamma, lam) - brute)) < 1e-12


def test_ppo_surrogate_examples():
    assert G.ppo_surrogate(1.3, 1.0, 0.2) == pytest.approx(1.2)
    assert G.ppo_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)


def test_ppo_loss_unit_ratio(rng):
    adv = rng.normal(size=8)
    lp = rng.normal(size=8)
    out = G.ppo_loss(lp, lp, adv, 0.2, np.zeros(8), np.zeros(8), normalize=False)
    assert out["policy"] == pytest.approx(-adv.mean())
    normed = G.ppo_loss(lp, lp, adv, 0.2, np.zeros(8), np.zeros(8))
    assert normed["policy"] == pytest.approx(0.0, abs=1e-12)


def test_ppo_unbounded_clip_is_unclipped(rng):
    for _ in range(100):
        ratio, adv = np.exp(rng.normal(size=10)), rng.normal(size=10)
        assert np.allclose(G.ppo_surrogate(ratio, adv, 1e9), ratio * adv)


def test_ppo_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        G.ppo_loss([0.0], [1000.0], [1.0], 0.2, [0.0], [0.0])


def test_a2c_loss_examples():
    out = G.a2c_loss([-0.5], [2.0], [1.0], [1.5])
    assert out == {"actor_loss": pytest.approx(1.0), "critic_loss": pytest.approx(0.25),
                   "total": pytest.approx(1.25)}
    assert G.a2c_loss([-0.3, -2.0], [0, 0], [1, 2], [0, 0])["actor_loss"] == 0
    assert G.a2c_loss([-0.3, -2.0], [1, 2], [1, 2], [1, 2])["critic_loss"] == 0
    with pytest.raises(ValueError):
        G.a2c_loss([-0.5], [1.0, 2.0], [1.0], [1.0])


# --- agents end to end ---------------------------------------------------------

def toy_rollout(agent, steps, rng):
    """Drive an agent on random 4-dim observations with episodes of length 3."""
    obs = rng.normal(size=4)
    mask = np.ones(agent.n_actions, dtype=bool)
    for t in range(1, steps + 1):
        a = agent.act(obs, mask)
        assert mask[a]
        nxt = rng.normal(size=4)
        done = t % 3 == 0
        agent.observe(obs, a, float(a == 1), nxt, done, mask, weight=0.5, mask=mask)
        if done:
            agent.end_episode(t // 3)
        obs = nxt
    return agent


@pytest.mark.parametrize("algorithm", G.ALGORITHMS)
@pytest.mark.parametrize("approximator", G.APPROXIMATORS)
def test_agents_run_with_either_approximator(algorithm, approximator):
    cfg = G.AgentConfig(algorithm=algorithm, approximator=approximator, batch_size=4,
                        rollout_len=6, vqc_depth=1, hidden=(8,))
    agent = G.make_agent(4, 3, cfg, rng=0)
    assert type(agent) is G.AGENT_CLASSES[algorithm]
    toy_rollout(agent, 24, np.random.default_rng(0))
    assert agent.updates > 0
    kinds = {n.kind for n in agent.nets.values()}
    assert kinds == ({"vqc"} if approximator == "quantum" else {"mlp"})


def test_quantum_networks_selection():
    cfg = G.AgentConfig(algorithm="A2C", approximator="quantum", quantum_networks=("critic",))
    agent = G.make_agent(4, 3, cfg, rng=0)
    assert agent.actor.kind == "mlp" and agent.critic.kind == "vqc"


@pytest.mark.parametrize("algorithm", G.ALGORITHMS)
def test_checkpoint_roundtrip(algorithm):
    cfg = G.AgentConfig(algorithm=algorithm, batch_size=4, rollout_len=6, hidden=(8,))
    a = toy_rollout(G.make_agent(4, 3, cfg, rng=0), 12, np.random.default_rng(0))
    b = G.make_agent(4, 3, cfg, rng=99)
    b.load_checkpoint(json.loads(json.dumps(a.checkpoint())))
    x = np.random.default_rng(5).normal(size=(3, 4))
    for name in a.nets:
        assert np.array_equal(a.nets[name].predict(x if name not in ("critic1", "critic2")
                                                   else np.hstack([x, np.eye(3)])),
                              b.nets[name].predict(x if name not in ("critic1", "critic2")
                                                   else np.hstack([x, np.eye(3)])))
    assert b.epsilon == a.epsilon
    with pytest.raises(ValueError):
        other = "PPO" if algorithm != "PPO" else "A2C"
        G.make_agent(4, 3, G.AgentConfig(algorithm=other)).load_checkpoint(a.checkpoint())


def test_agent_config_validation():
    for kw, field in [({"gamma": 0.0}, "gamma"), ({"clip_eps": 1.0}, "clip_eps"),
                      ({"policy_delay": 0}, "policy_delay"), ({"algorithm": "SAC"}, "algorithm")]:
        with pytest.raises(ValueError, match=field):
            G.AgentConfig(**kw)


def test_display_names():
    assert G.display_name("DDQN", "classical") == "PERDDQN"
    assert G.display_name("DDQN", "quantum") == "PERQDDQN"
