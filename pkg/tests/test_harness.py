import json
import re

import numpy as np
import pytest

from qasforge import harness as H
from qasforge import qsim
from qasforge.env import EpisodeRecord, StatePrepEnv


def write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def small_config(tmp_path, **over):
    data = {"episodes": 12, "output_dir": str(tmp_path / "out"),
            "agent": {"batch_size": 8, "hidden": [8]}}
    data.update(over)
    return H.config_from_dict(data)


def bell_actions(config):
    env = StatePrepEnv(config.env_config(config.stages()[0]))
    t = env.table
    return [t.entries.index(qsim.ry(0)), t.entries.index(qsim.cnot(0, 1))]


class RandomAgent:
    """Uniform over legal actions; the lr-0, epsilon-1 agent without the training cost."""

    epsilon = 1.0

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def act(self, obs, mask):
        return int(self.rng.choice(np.flatnonzero(mask)))

    def observe(self, *a, **kw):
        pass

    def end_episode(self, episode):
        pass

    def restart_exploration(self):
        pass


# --- config --------------------------------------------------------------------

def test_minimal_config_defaults(tmp_path):
    cfg = H.load_config(write_cfg(tmp_path, {}))
    assert cfg.agent.batch_size == 1000
    assert cfg.replay.capacity == 15000
    assert cfg.agent.lr == 5e-4
    assert cfg.agent.target_sync_every == 50
    assert cfg.exploration.epsilon_decay == 0.99995
    assert cfg.episodes == 10000 and cfg.eval_window == 100
    assert (cfg.replay.alpha, cfg.replay.beta_start, cfg.replay.beta_increment) == (0.6, 0.4, 1e-3)
    assert (cfg.exploration.epsilon_start, cfg.exploration.epsilon_min) == (1.0, 0.05)


def test_range_error_names_field(tmp_path):
    with pytest.raises(H.ConfigError, match=r"env\.xi"):
        H.load_config(write_cfg(tmp_path, {"env": {"xi": 1.5}}))


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(H.ConfigError, match="foo"):
        H.load_config(write_cfg(tmp_path, {"foo": 1}))
    with pytest.raises(H.ConfigError, match=r"agent\.foo"):
        H.load_config(write_cfg(tmp_path, {"agent": {"foo": 1}}))


def test_parse_and_type_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"seed": 1,,}')
    with pytest.raises(H.ConfigError, match="line 1"):
        H.load_config(p)
    with pytest.raises(H.ConfigError, match="episodes"):
        H.config_from_dict({"episodes": "many"})
    with pytest.raises(H.ConfigError, match="episodes"):
        H.config_from_dict({"episodes": 0})
    with pytest.raises(H.ConfigError):
        H.load_config(tmp_path / "missing.json")


def test_config_hash_ignores_output_dir(tmp_path):
    a = small_config(tmp_path)
    b = small_config(tmp_path, output_dir="elsewhere")
    c = small_config(tmp_path, seed=1)
    assert H.config_hash(a) == H.config_hash(b) != H.config_hash(c)


def test_resolved_config_reloads(tmp_path):
    a = small_config(tmp_path, approximator="quantum", curriculum={"enabled": True})
    b = H.config_from_dict(json.loads(json.dumps(a.to_json())))
    assert b == a and H.config_hash(b) == H.config_hash(a)
    with pytest.raises(H.ConfigError, match="agent.approximator"):
        H.config_from_dict({"agent": {"approximator": "quantum"}})


def test_substreams_are_independent():
    a = H.substream(0, "agent").random(3)
    assert np.array_equal(a, H.substream(0, "agent").random(3))
    assert not np.array_equal(a, H.substream(0, "replay").random(3))
    assert not np.array_equal(a, H.substream(1, "agent").random(3))


# --- runs ----------------------------------------------------------------------

def test_scripted_bell_run_is_always_optimal(tmp_path):
    cfg = small_config(tmp_path, episodes=20)
    res = H.run_experiment(cfg, agent=H.ScriptedAgent(bell_actions(cfg)), write=False)
    assert res.summary.r_success == 1.0 and res.summary.r_optimal == 1.0
    assert all(r.steps == 2 for r in res.records)


def test_random_search_baseline_is_nonzero(tmp_path):
    cfg = small_config(tmp_path, episodes=300)
    res = H.run_experiment(cfg, agent=RandomAgent(0), write=False)
    assert res.summary.r_success >= 0.05


def test_run_is_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = small_config(tmp_path, output_dir=str(tmp_path / name), episodes=15)
        res = H.run_experiment(cfg)
        assert res.agent.updates > 0
        outs.append((tmp_path / name / "episodes.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = outs[0].decode().splitlines()
    assert rows[0] == ",".join(H.CSV_COLUMNS) and len(rows) == 16


def test_curriculum_run_promotes_and_logs_stages(tmp_path):
    stages = [{"target": "phi+", "xi": 0.1, "max_steps": 4},
              {"target": "ghz", "xi": 0.01, "max_steps": 6, "n_qubits": 3}]
    cfg = small_config(tmp_path, episodes=8, curriculum={"enabled": True, "stages": stages,
                                                         "window": 3, "promote_threshold": 0.9})
    assert cfg.register_size() == 3
    env = StatePrepEnv(cfg.env_config(cfg.stages()[0]))
    t = env.table
    script = [t.entries.index(qsim.ry(0)), t.entries.index(qsim.cnot(0, 1)),
              t.entries.index(qsim.cnot(1, 2))]
    res = H.run_experiment(cfg, agent=H.ScriptedAgent(script), out_dir=tmp_path / "cur")
    ids = [r.stage_id for r in res.records]
    assert ids == sorted(ids) and ids[0] == 0 and ids[-1] == 1
    # the Bell stage solves after two gates, the GHZ stage needs all three
    assert [r.steps for r in res.records] == [2, 2, 2] + [3] * 5
    assert res.summary.final_stage_id == 1


def test_run_error_carries_episode(tmp_path):
    cfg = small_config(tmp_path, episodes=3)
    with pytest.raises(H.RunError) as info:
        H.run_experiment(cfg, agent=H.ScriptedAgent([999]), out_dir=tmp_path / "err")
    assert info.value.episode == 1 and info.value.stage_id == 0
    assert not (tmp_path / "err" / "episodes.csv").exists()


# --- outputs -------------------------------------------------------------------

def rec(success, optimal=False, stage=0):
    return EpisodeRecord(2, 0.0 if success else 0.5, success, optimal, 0.5, stage, 1.0)


def test_write_outputs_three_records(tmp_path):
    cfg = small_config(tmp_path)
    records = [rec(True, True), rec(False), rec(True)]
    paths = H.write_outputs(records, H.summarize(records, cfg), tmp_path / "o", cfg)
    lines = paths["episodes"].read_text().splitlines()
    assert lines[0] == "episode,stage_id,steps,final_cost,success,optimal,epsilon,reward_sum"
    assert lines[1:] == ["1,0,2,0.0,1,1,0.5,1.0", "2,0,2,0.5,0,0,0.5,1.0", "3,0,2,0.0,1,0,0.5,1.0"]
    summary = json.loads(paths["summary"].read_text())
    assert summary["r_success"] == pytest.approx(2 / 3) and summary["optimal_count"] == 1
    assert json.loads(paths["config"].read_text())["episodes"] == 12


def test_write_outputs_replaces_files(tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "o"
    H.write_outputs([rec(True)] * 5, H.summarize([rec(True)] * 5, cfg), out, cfg)
    H.write_outputs([rec(False)], H.summarize([rec(False)], cfg), out, cfg)
    assert len((out / "episodes.csv").read_text().splitlines()) == 2
    assert json.loads((out / "summary.json").read_text())["r_success"] == 0.0
    assert not [p for p in out.iterdir() if p.name.endswith(".tmp")]


def test_write_outputs_empty(tmp_path):
    cfg = small_config(tmp_path)
    paths = H.write_outputs([], H.summarize([], cfg), tmp_path / "e", cfg)
    assert paths["episodes"].read_text() == ",".join(H.CSV_COLUMNS) + "\n"
    s = json.loads(paths["summary"].read_text())
    assert s["r_success"] is None and s["r_optimal"] is None


def test_write_outputs_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = small_config(tmp_path)
    with pytest.raises(OSError, match="file"):
        H.write_outputs([], H.summarize([], cfg), blocker / "sub", cfg)


def test_interval_shares_sum_to_success_ratio(rng):
    cfg = H.ExperimentConfig()
    for n in (1, 3, 4, 7, 101, 1000):
        records = [rec(bool(rng.random() < 0.4)) for _ in range(n)]
        s = H.summarize(records, cfg)
        shares = [iv["share"] for iv in s.intervals]
        assert len(s.intervals) == 4
        assert abs(sum(shares) - s.r_success) < 1e-12
        assert sum(iv["episodes"] for iv in s.intervals) == n
        ends = [iv for iv in s.intervals if iv["episodes"]]
        assert ends[0]["start"] == 1 and ends[-1]["end"] == n
        assert all(a["end"] + 1 == b["start"] for a, b in zip(ends, ends[1:]))


# --- plots ---------------------------------------------------------------------

def make_run(tmp_path, name, records, label=None):
    cfg = small_config(tmp_path)
    d = tmp_path / name
    H.write_outputs(records, H.summarize(records, cfg), d, cfg)
    if label:
        s = json.loads((d / "summary.json").read_text())
        s["label"] = label
        (d / "summary.json").write_text(json.dumps(s))
    return d / "episodes.csv"


def polylines(svg):
    return re.findall(r'<polyline[^>]*points="([^"]*)"', svg)


def test_plot_one_run(tmp_path):
    csv = make_run(tmp_path, "r", [rec(i % 2 == 0) for i in range(30)])
    paths = H.render_plots([csv], tmp_path / "plots", window=5)
    for p in paths.values():
        svg = p.read_text()
        assert svg.startswith("<svg") and len(polylines(svg)) == 1
    assert "PERDDQN" in paths["success"].read_text()


def test_plot_four_runs_with_legend(tmp_path):
    labels = ["PERDDQN", "PERQDDQN", "PERA2C", "PERPPO"]
    csvs = [make_run(tmp_path, f"r{i}", [rec(True)] * (10 + i), label) for i, label in enumerate(labels)]
    paths = H.render_plots(csvs, tmp_path / "plots")
    for p in paths.values():
        svg = p.read_text()
        assert len(polylines(svg)) == 4
        assert all(f">{label}<" in svg for label in labels)


def test_plot_constant_success_is_flat_at_one(tmp_path):
    csv = make_run(tmp_path, "r", [rec(True)] * 20)
    svg = H.render_plots([csv], tmp_path / "plots", window=5)["success"].read_text()
    ys = {pt.split(",")[1] for pt in polylines(svg)[0].split()}
    assert len(ys) == 1
    top = re.search(r'<line x1="70" y1="(\d+)"', svg)
    assert float(ys.pop()) == 40.0 and top


def test_plot_is_deterministic_and_checks_schema(tmp_path):
    csv = make_run(tmp_path, "r", [rec(True), rec(False)])
    a = H.render_plots([csv], tmp_path / "p1")["success"].read_bytes()
    b = H.render_plots([csv], tmp_path / "p2")["success"].read_bytes()
    assert a == b
    bad = tmp_path / "bad.csv"
    bad.write_text("episode,success\n1,1\n")
    with pytest.raises(ValueError, match="schema"):
        H.render_plots([csv, bad], tmp_path / "p3")
