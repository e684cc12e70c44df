"""Experiment orchestration: config loading, the training loop, logs and plots."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import AgentConfig, ExplorationSchedule, ReplayConfig, display_name, make_agent
from .curriculum import CurriculumScheduler, CurriculumStage, check_ladder, stage_weights
from .env import EnvConfig, EpisodeRecord, StatePrepEnv, run_metrics

CSV_COLUMNS = ("episode", "stage_id", "steps", "final_cost", "success", "optimal",
               "epsilon", "reward_sum")
N_INTERVALS = 4


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


class RunError(RuntimeError):
    """A module error raised mid-run, tagged with episode and stage."""

    def __init__(self, message, episode=None, stage_id=None):
        super().__init__(message)
        self.episode, self.stage_id = episode, stage_id


# --- configuration ---------------------------------------------------------

@dataclass
class EnvSection:
    target: str = "phi+"
    xi: float = 0.01
    max_steps: int = 10
    c_min: float = 0.0
    observation_mode: str = "statevector"
    action_space_mode: str = "minimal"
    tune_budget: int = 50
    tune_step: float = 0.1


@dataclass
class ExplorationSection:
    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.99995


@dataclass
class StageSection:
    target: str = "phi+"
    xi: float = 0.01
    max_steps: int = 10
    n_qubits: int | None = None
    min_gate_count: int | None = None


@dataclass
class CurriculumSection:
    """``stages`` empty means a single stage taken from the env section."""

    enabled: bool = False
    stages: list = field(default_factory=list)
    weight_mode: str = "loss"
    use_weights: bool = True
    n_pairs: int = 16
    noise_std: float = 0.1
    window: int = 100
    promote_threshold: float = 0.9


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_qubits: int = 2
    algorithm: str = "DDQN"
    approximator: str = "classical"
    episodes: int = 10000
    eval_window: int = 100
    output_dir: str = "runs/default"
    env: EnvSection = field(default_factory=EnvSection)
    agent: AgentConfig = field(default_factory=AgentConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    exploration: ExplorationSection = field(default_factory=ExplorationSection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)

    @property
    def label(self) -> str:
        return display_name(self.algorithm, self.approximator)

    def to_json(self) -> dict:
        return asdict(self)

    def stages(self) -> list[CurriculumStage]:
        cur = self.curriculum
        if cur.enabled and cur.stages:
            specs = cur.stages
        else:
            e = self.env
            specs = [StageSection(e.target, e.xi, e.max_steps, self.n_qubits)]
        return [CurriculumStage(i, s.target, s.xi, s.max_steps, s.n_qubits or self.n_qubits,
                                s.min_gate_count, cur.window, cur.promote_threshold)
                for i, s in enumerate(specs)]

    def register_size(self) -> int:
        return max([self.n_qubits] + [s.n_qubits for s in self.stages()])

    def env_config(self, stage: CurriculumStage) -> EnvConfig:
        e = self.env
        return EnvConfig(self.register_size(), stage.target_state(self.register_size()),
                         stage.xi, stage.max_steps, e.c_min, e.observation_mode,
                         e.action_space_mode, e.tune_budget, e.tune_step,
                         stage.min_gate_count, stage.stage_id)


_SECTIONS = {"env": EnvSection, "agent": AgentConfig, "replay": ReplayConfig,
             "exploration": ExplorationSection, "curriculum": CurriculumSection}
_TYPES = {"int": (int,), "float": (int, float), "str": (str,), "bool": (bool,),
          "tuple": (list, tuple), "list": (list,)}


def _check_type(path, value, annotation):
    allowed = ()
    for part in annotation.split("|"):
        part = part.strip()
        if part == "None":
            if value is None:
                return
        else:
            allowed += _TYPES.get(part, (object,))
    if isinstance(value, bool) and bool not in allowed:
        raise ConfigError(f"{path}: expected {annotation}, got {value!r}")
    if not isinstance(value, allowed):
        raise ConfigError(f"{path}: expected {annotation}, got {value!r}")


def build_section(cls, data, path, skip=()):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    for key in data:
        if key not in fields:
            raise ConfigError(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
    kw = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key in _SECTIONS and not path:
            continue
        _check_type(where, value, str(fields[key].type))
        kw[key] = value
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{path}.{exc}" if path else str(exc)) from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a parsed config and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    top = build_section(ExperimentConfig, {k: v for k, v in data.items() if k not in _SECTIONS}, "")
    if top.episodes < 1:
        raise ConfigError("episodes: must be >= 1")
    if top.eval_window < 1:
        raise ConfigError("eval_window: must be >= 1")
    if top.n_qubits < 2:
        raise ConfigError("n_qubits: must be >= 2")
    top.env = build_section(EnvSection, data.get("env", {}), "env")
    agent = dict(data.get("agent", {}))
    for key in ("algorithm", "approximator"):
        # resolved configs repeat these inside "agent"; only a conflicting copy is an error
        if key in agent and agent[key] != getattr(top, key):
            raise ConfigError(f"agent.{key}: set {key} at the top level")
    agent["algorithm"], agent["approximator"] = top.algorithm, top.approximator
    try:
        top.agent = build_section(AgentConfig, agent, "agent")
    except ConfigError as exc:
        msg = str(exc)
        for key in ("algorithm", "approximator"):
            if msg.startswith(f"agent.{key}"):
                raise ConfigError(msg[len("agent."):]) from exc
        raise
    top.replay = build_section(ReplayConfig, data.get("replay", {}), "replay")
    top.exploration = build_section(ExplorationSection, data.get("exploration", {}), "exploration")
    try:
        ExplorationSchedule(**asdict(top.exploration))
    except ValueError as exc:
        raise ConfigError(f"exploration.{exc}") from exc
    cur = dict(data.get("curriculum", {}))
    raw_stages = cur.pop("stages", [])
    if not isinstance(raw_stages, list):
        raise ConfigError("curriculum.stages: expected a list")
    top.curriculum = build_section(CurriculumSection, cur, "curriculum")
    if top.curriculum.weight_mode not in ("loss", "sampling"):
        raise ConfigError("curriculum.weight_mode: expected 'loss' or 'sampling'")
    top.curriculum.stages = [build_section(StageSection, s, f"curriculum.stages[{i}]")
                             for i, s in enumerate(raw_stages)]
    _validate_stages(top)
    return top


def _validate_stages(cfg: ExperimentConfig):
    try:
        stages = cfg.stages()
    except ValueError as exc:
        where = "curriculum.stages" if cfg.curriculum.enabled and cfg.curriculum.stages else "env"
        raise ConfigError(f"{where}.{exc}") from exc
    try:
        check_ladder(stages)
    except ValueError as exc:
        raise ConfigError(f"curriculum.stages: {exc}") from exc
    for s in stages:
        try:
            cfg.env_config(s)
        except ValueError as exc:
            raise ConfigError(f"env.{exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(data)


def config_hash(config: ExperimentConfig) -> str:
    d = config.to_json()
    d.pop("output_dir")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# --- randomness --------------------------------------------------------------

def substream(seed: int, name: str) -> np.random.Generator:
    """Named child stream; adding a new consumer never shifts the others."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


# --- summaries ---------------------------------------------------------------

@dataclass
class RunSummary:
    label: str
    episodes: int
    r_success: float | None
    r_optimal: float | None
    final_success_probability: float | None
    optimal_count: int
    wall_clock_seconds: float
    config_hash: str
    intervals: list
    final_stage_id: int = 0
    notes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def interval_breakdown(records: Sequence[EpisodeRecord], n_segments: int = N_INTERVALS) -> list:
    """Split episodes into contiguous segments.

    ``share`` is the segment's successes over all episodes, so the shares sum
    to the overall success ratio; ``success_rate`` is the within-segment rate.
    """
    total = len(records)
    out = []
    for seg in np.array_split(np.arange(total), n_segments):
        succ = sum(records[i].success for i in seg)
        out.append({
            "start": int(seg[0]) + 1 if len(seg) else None,
            "end": int(seg[-1]) + 1 if len(seg) else None,
            "episodes": len(seg),
            "successes": int(succ),
            "success_rate": succ / len(seg) if len(seg) else None,
            "share": succ / total if total else None,
        })
    return out


def summarize(records: Sequence[EpisodeRecord], config: ExperimentConfig,
              seconds: float = 0.0) -> RunSummary:
    if records:
        m = run_metrics(records, config.eval_window)
        r_s, r_o = m["r_success"], m["r_optimal"]
        final_p = float(m["success_probability_curve"][-1])
        n_opt = int(m["optimal_success_cumulative"][-1])
    else:
        r_s = r_o = final_p = None
        n_opt = 0
    return RunSummary(config.label, len(records), r_s, r_o, final_p, n_opt, float(seconds),
                      config_hash(config), interval_breakdown(records),
                      records[-1].stage_id if records else 0,
                      {"hyperparameter_5e-3": f"used as soft-update rate tau={config.agent.tau}; "
                                              f"discount gamma={config.agent.gamma}"})


# --- output ------------------------------------------------------------------

def csv_row(episode: int, r: EpisodeRecord) -> list:
    return [episode, r.stage_id, r.steps, repr(float(r.final_cost)), int(r.success),
            int(r.optimal), repr(float(r.epsilon_at_end)), repr(float(r.reward_sum))]


def atomic_write(path: Path, text: str):
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"{path}: write failed ({exc.strerror or exc})") from exc


def records_csv(records: Sequence[EpisodeRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, r in enumerate(records, start=1):
        w.writerow(csv_row(i, r))
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_outputs(records: Sequence[EpisodeRecord], summary: RunSummary, out_dir,
                  config: ExperimentConfig | None = None) -> dict:
    """Write episodes.csv, summary.json and config_resolved.json atomically."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out_dir}: cannot create output directory ({exc.strerror})") from exc
    paths = {"episodes": out_dir / "episodes.csv", "summary": out_dir / "summary.json",
             "config": out_dir / "config_resolved.json"}
    atomic_write(paths["episodes"], records_csv(records))
    atomic_write(paths["summary"], _json_text(summary.to_json()))
    if config is not None:
        atomic_write(paths["config"], _json_text(config.to_json()))
    else:
        paths.pop("config")
    return paths


class _IncrementalCsv:
    """Rows go to a temp file as episodes finish; ``commit`` renames it into place."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, self.tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".episodes.", suffix=".tmp")
        self.fh = os.fdopen(fd, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(CSV_COLUMNS)

    def write(self, episode, record):
        self.writer.writerow(csv_row(episode, record))
        self.fh.flush()

    def commit(self):
        self.fh.close()
        os.replace(self.tmp, self.path)

    def abort(self):
        self.fh.close()
        if os.path.exists(self.tmp):
            os.remove(self.tmp)


# --- the training loop -------------------------------------------------------

@dataclass
class RunResult:
    records: list
    summary: RunSummary
    agent: object
    paths: dict | None = None


def build_agent(config: ExperimentConfig, env: StatePrepEnv):
    ex = config.exploration
    schedule = ExplorationSchedule(ex.epsilon_start, ex.epsilon_min, ex.epsilon_decay)
    return make_agent(env.obs_dim, env.n_actions, config.agent, exploration=schedule,
                      replay=config.replay, rng=substream(config.seed, "agent"),
                      replay_rng=substream(config.seed, "replay"),
                      weight_mode=config.curriculum.weight_mode)


def run_experiment(config: ExperimentConfig, out_dir=None, agent=None,
                   write: bool = True, progress=None) -> RunResult:
    """Train for ``config.episodes`` episodes across the curriculum ladder.

    ``agent`` overrides the configured learner (anything with ``act``,
    ``observe``, ``end_episode``, ``restart_exploration`` and ``epsilon``).
    With ``write`` the episode log streams to ``out_dir`` and the summary
    plus resolved config are written at the end.
    """
    start = time.perf_counter()
    stages = config.stages()
    scheduler = CurriculumScheduler(stages)
    if config.curriculum.enabled and config.curriculum.use_weights and len(stages) > 1:
        weights = stage_weights(stages, substream(config.seed, "curriculum"),
                                config.curriculum.n_pairs, config.curriculum.noise_std)
    else:
        weights = np.ones(len(stages))
    env_configs = [config.env_config(s) for s in stages]
    env = StatePrepEnv(env_configs[0])
    if agent is None:
        agent = build_agent(config, env)

    out_dir = Path(out_dir if out_dir is not None else config.output_dir)
    log = _IncrementalCsv(out_dir / "episodes.csv") if write else None
    records = []
    episode = 0
    try:
        for episode in range(1, config.episodes + 1):
            k = scheduler.index
            obs = env.reset(env_configs[k])
            mask = env.legal_mask()
            while not env.done:
                action = int(agent.act(obs, mask))
                out = env.step(action)
                next_mask = env.legal_mask()
                agent.observe(obs, action, out.reward, out.observation, out.done, next_mask,
                              weight=float(weights[k]), mask=mask)
                obs, mask = out.observation, next_mask
            record = env.record(agent.epsilon)
            agent.end_episode(episode)
            records.append(record)
            if log:
                log.write(episode, record)
            if scheduler.update(record):
                agent.restart_exploration()
            if progress is not None:
                progress(episode, record)
    except Exception as exc:
        if log:
            log.abort()
        stage = stages[scheduler.index].stage_id
        raise RunError(f"episode {episode}, stage {stage}: {type(exc).__name__}: {exc}",
                       episode, stage) from exc

    summary = summarize(records, config, time.perf_counter() - start)
    paths = None
    if log:
        log.commit()
        paths = write_outputs(records, summary, out_dir, config)
    return RunResult(records, summary, agent, paths)


class ScriptedAgent:
    """Plays a fixed action sequence; useful as a fixture and for sanity runs."""

    def __init__(self, actions: Sequence[int]):
        self.actions = list(actions)
        self.t = 0
        self.epsilon = 0.0

    def act(self, obs, mask):
        a = self.actions[self.t % len(self.actions)]
        self.t += 1
        return a

    def observe(self, *args, **kw):
        return None

    def end_episode(self, episode):
        self.t = 0

    def restart_exploration(self):
        pass


# --- plots ---------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f")


def read_episodes_csv(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: schema mismatch, expected columns {','.join(CSV_COLUMNS)}")
        rows = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{line}: expected {len(CSV_COLUMNS)} fields")
            rows.append(dict(zip(CSV_COLUMNS, row)))
    return rows


def _run_label(path: Path) -> str:
    summary = path.parent / "summary.json"
    if summary.exists():
        try:
            return json.loads(summary.read_text())["label"]
        except (KeyError, ValueError):
            pass
    return path.parent.name or path.stem


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _svg_chart(title, ylabel, series, y_max=None) -> str:
    w, h = 640, 400
    left, right, top, bottom = 70, 160, 40, 50
    pw, ph = w - left - right, h - top - bottom
    x_max = max(max(len(ys) for _, ys in series), 2)
    y_hi = y_max if y_max is not None else max(1.0, max(max(ys, default=0) for _, ys in series))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for i in range(5):
        yv = y_hi * i / 4
        py = top + ph - ph * i / 4
        parts.append(f'<text x="{left - 6}" y="{py + 4:.2f}" text-anchor="end">{_fmt(yv)}</text>')
        xv = 1 + (x_max - 1) * i / 4
        px = left + pw * i / 4
        parts.append(f'<text x="{px:.2f}" y="{top + ph + 18}" text-anchor="middle">{int(round(xv))}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{h - 10}" text-anchor="middle">episode</text>')
    parts.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {top + ph / 2})">{ylabel}</text>')
    for k, (label, ys) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{left + pw * i / (x_max - 1):.2f},{top + ph - ph * y / y_hi:.2f}"
                       for i, y in enumerate(ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 18 * k
        parts.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 32}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 38}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_plots(csv_paths: Sequence, out_dir, window: int = 100) -> dict:
    """Success-probability and cumulative-optimal charts over all runs."""
    if not csv_paths:
        raise ValueError("no CSV files given")
    success, optimal = [], []
    for path in csv_paths:
        path = Path(path)
        rows = read_episodes_csv(path)
        records = [EpisodeRecord(int(r["steps"]), float(r["final_cost"]), r["success"] == "1",
                                 r["optimal"] == "1", float(r["epsilon"]), int(r["stage_id"]),
                                 float(r["reward_sum"])) for r in rows]
        label = _run_label(path)
        if records:
            m = run_metrics(records, window)
            curve, cum = m["success_probability_curve"], m["optimal_success_cumulative"]
        else:
            curve, cum = np.zeros(0), np.zeros(0)
        success.append((label, [float(v) for v in curve]))
        optimal.append((label, [float(v) for v in cum]))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"success": out_dir / "success_probability.svg",
             "optimal": out_dir / "optimal_success.svg"}
    atomic_write(paths["success"], _svg_chart("Success probability", "success probability",
                                               success, y_max=1.0))
    y_hi = max([1.0] + [max(ys, default=0) for _, ys in optimal])
    atomic_write(paths["optimal"], _svg_chart("Optimal successes", "cumulative optimal",
                                               optimal, y_max=math.ceil(y_hi)))
    return paths


__all__ = [
    "CSV_COLUMNS", "ConfigError", "RunError", "EnvSection", "ExplorationSection",
    "StageSection", "CurriculumSection", "ExperimentConfig", "config_from_dict", "load_config",
    "config_hash", "substream", "RunSummary", "interval_breakdown", "summarize", "write_outputs",
    "records_csv", "run_experiment", "RunResult", "ScriptedAgent", "render_plots",
    "read_episodes_csv", "build_agent",
]
