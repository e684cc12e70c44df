"""Gate-by-gate state-preparation environment."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import qsim
from .qsim import Circuit, GateAction

OBSERVATION_MODES = ("statevector", "mps_features")
ACTION_SPACE_MODES = ("minimal", "paper")
DONE_SOLVED, DONE_BUDGET, DONE_NONE = "solved", "step_budget", "none"
SUCCESS_REWARD = 5.0
FAILURE_REWARD = -5.0
SHAPING_GUARD = 1e-8
MPS_OBS_BOND = 2


def minimal_gate_count(target: str, n_qubits: int) -> int:
    """Fewest gates from the alphabet that prepare ``target`` from |0...0>."""
    key = target.lower()
    if key in ("phi+", "phi-"):
        return 2
    if key in ("psi+", "psi-"):
        return 3
    if key == "ghz":
        return n_qubits
    raise ValueError(f"no known minimal gate count for {target!r}")


@dataclass
class EnvConfig:
    n_qubits: int
    target: np.ndarray
    xi: float = 0.01
    max_steps: int = 10
    c_min: float = 0.0
    observation_mode: str = "statevector"
    action_space_mode: str = "minimal"
    tune_budget: int = 50
    tune_step: float = 0.1
    min_gate_count: int | None = None
    stage_id: int = 0

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=complex)
        if self.n_qubits < 2:
            raise ValueError("n_qubits: must be >= 2")
        if self.target.shape != (1 << self.n_qubits,):
            raise ValueError("target: length must be 2**n_qubits")
        if abs(np.linalg.norm(self.target) - 1.0) > 1e-10:
            raise ValueError("target: state must be normalized")
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi: must lie in (0, 1), got {self.xi}")
        if self.max_steps < 1:
            raise ValueError("max_steps: must be >= 1")
        if not 0.0 <= self.c_min < 1.0:
            raise ValueError("c_min: must lie in [0, 1)")
        if self.observation_mode not in OBSERVATION_MODES:
            raise ValueError(f"observation_mode: expected one of {OBSERVATION_MODES}")
        if self.action_space_mode not in ACTION_SPACE_MODES:
            raise ValueError(f"action_space_mode: expected one of {ACTION_SPACE_MODES}")
        if self.tune_budget < 0:
            raise ValueError("tune_budget: must be >= 0")

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits, "target": qsim.state_to_json(self.target),
            "xi": self.xi, "max_steps": self.max_steps, "c_min": self.c_min,
            "observation_mode": self.observation_mode,
            "action_space_mode": self.action_space_mode,
            "tune_budget": self.tune_budget, "tune_step": self.tune_step,
            "min_gate_count": self.min_gate_count, "stage_id": self.stage_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        target = d.pop("target")
        n = int(d["n_qubits"])
        if isinstance(target, str):
            d.setdefault("min_gate_count", minimal_gate_count(target, n))
            target = qsim.make_target_state(target, n)
        else:
            target = qsim.state_from_json(target)
        return cls(target=target, **d)


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    cost: float
    done: bool
    done_reason: str


@dataclass
class EpisodeRecord:
    steps: int
    final_cost: float
    success: bool
    optimal: bool
    epsilon_at_end: float
    stage_id: int
    reward_sum: float = 0.0


# --- actions ---------------------------------------------------------------

@dataclass(frozen=True)
class ActionTable:
    entries: tuple

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> GateAction:
        return self.entries[i]


def enumerate_actions(n: int, mode: str = "minimal") -> ActionTable:
    """Rotation templates by (axis, qubit), then CNOTs by (control, target).

    ``paper`` mode cycles through the CNOT entries again until the table holds
    3n + 2n^2 actions.
    """
    if n < 2:
        raise ValueError("action table needs n >= 2")
    if mode not in ACTION_SPACE_MODES:
        raise ValueError(f"unknown action space mode {mode!r}")
    rotations = [GateAction(axis, qubit=q) for axis in qsim.ROTATIONS for q in range(n)]
    cnots = [qsim.cnot(c, t) for c in range(n) for t in range(n) if c != t]
    entries = rotations + cnots
    if mode == "paper":
        want = 3 * n + 2 * n * n
        k = 0
        while len(entries) < want:
            entries.append(cnots[k % len(cnots)])
            k += 1
    return ActionTable(tuple(entries))


def legal_mask(history: Sequence[GateAction], table: ActionTable) -> np.ndarray:
    """Mask out gates that would cancel or merge with the last gate."""
    mask = np.ones(table.size, dtype=bool)
    if not history:
        return mask
    last = history[-1]
    for i, a in enumerate(table.entries):
        if a.same_template(last):
            mask[i] = False
    return mask


# --- reward ----------------------------------------------------------------

def shaped_reward(prev_cost: float, cost: float, t: int, xi: float, max_steps: int,
                  c_min: float = 0.0) -> tuple[float, str]:
    """Reward and termination reason for step ``t`` (1-based)."""
    if cost < xi:
        return SUCCESS_REWARD, DONE_SOLVED
    if t >= max_steps:
        return FAILURE_REWARD, DONE_BUDGET
    denom = prev_cost - c_min
    if denom < SHAPING_GUARD:
        return 0.0, DONE_NONE
    return float(min(max((prev_cost - cost) / denom, -1.0), 1.0)), DONE_NONE


# --- observations ----------------------------------------------------------

def observation_size(n_qubits: int, mode: str) -> int:
    if mode == "statevector":
        return 2 << n_qubits
    if mode == "mps_features":
        return 16 * n_qubits
    raise ValueError(f"unknown observation mode {mode!r}")


def observe(state: np.ndarray, mode: str = "statevector") -> np.ndarray:
    """Real feature vector for the agent.

    ``statevector``: real parts then imaginary parts.
    ``mps_features``: each site tensor of a bond-2 MPS is zero-padded into a
    (2, 2, 2) block; the n blocks are flattened and split into real parts then
    imaginary parts, giving 16 n features.  Global phase is left as is.
    """
    state = np.asarray(state, dtype=complex)
    if mode == "statevector":
        return np.concatenate([state.real, state.imag])
    if mode == "mps_features":
        mps = qsim.mps_decompose(state, MPS_OBS_BOND)
        blocks = np.zeros((mps.n_qubits, 2, 2, 2), dtype=complex)
        for k, t in enumerate(mps.site_tensors):
            blocks[k, :t.shape[0], :, :t.shape[2]] = t
        flat = blocks.reshape(-1)
        return np.concatenate([flat.real, flat.imag])
    raise ValueError(f"unknown observation mode {mode!r}")


# --- angle fitting ---------------------------------------------------------

_HALF_PI = math.pi / 2


def tune_angles(circuit: Circuit, target: np.ndarray, budget: int = 50,
                step_size: float = 0.1) -> Circuit:
    """Fit rotation angles to maximise fidelity with ``target``.

    Parameter-shift gradients of the infidelity drive an Adam update with
    learning rate ``step_size`` for ``budget`` iterations.  Each shifted
    fidelity is computed from cached forward states and back-propagated
    target co-states, so one iteration costs O(#gates).  The best iterate is
    returned, so the final cost never exceeds the initial one.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget == 0 or circuit.n_rotations == 0:
        return circuit
    n = circuit.n_qubits
    target = np.asarray(target, dtype=complex)
    gates = circuit.gates
    rot_at = [i for i, g in enumerate(gates) if g.is_rotation]
    theta = circuit.theta
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best_theta, best_cost = theta.copy(), math.inf
    psi0 = qsim.zero_state(n)

    for it in range(budget + 1):
        mats = [None] * len(gates)
        for j, k in enumerate(rot_at):
            mats[k] = qsim.rotation_matrix(gates[k].kind, theta[j])
        fwd = [psi0]
        psi = psi0
        for k, g in enumerate(gates):
            psi = _step(psi, g, mats[k], n)
            fwd.append(psi)
        cost = 1.0 - abs(np.vdot(target, psi)) ** 2
        if cost < best_cost:
            best_cost, best_theta = cost, theta.copy()
        if it == budget or cost < 1e-14:
            break
        grad = np.empty_like(theta)
        chi = target
        j = len(rot_at) - 1
        for k in range(len(gates) - 1, -1, -1):
            g = gates[k]
            if g.is_rotation:
                before = fwd[k]
                plus = qsim.apply_single(before, qsim.rotation_matrix(g.kind, theta[j] + _HALF_PI), g.qubit, n)
                minus = qsim.apply_single(before, qsim.rotation_matrix(g.kind, theta[j] - _HALF_PI), g.qubit, n)
                f_plus = abs(np.vdot(chi, plus)) ** 2
                f_minus = abs(np.vdot(chi, minus)) ** 2
                grad[j] = -(f_plus - f_minus) / 2
                chi = qsim.apply_single(chi, mats[k].conj().T, g.qubit, n)
                j -= 1
            else:
                chi = qsim.apply_cnot(chi, g.control, g.target, n)
        if np.max(np.abs(grad)) < 1e-12:
            break
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        mhat = m / (1 - b1 ** (it + 1))
        vhat = v / (1 - b2 ** (it + 1))
        theta = theta - step_size * mhat / (np.sqrt(vhat) + eps)
    return circuit.with_theta(best_theta)


def _step(psi, gate, mat, n):
    if gate.is_rotation:
        return qsim.apply_single(psi, mat, gate.qubit, n)
    return qsim.apply_cnot(psi, gate.control, gate.target, n)


# --- environment -----------------------------------------------------------

class StatePrepEnv:
    """Episode state machine: append a gate, refit angles, score the state."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.table = enumerate_actions(config.n_qubits, config.action_space_mode)
        self.obs_dim = observation_size(config.n_qubits, config.observation_mode)
        self.circuit = None
        self.done = True

    @property
    def n_actions(self) -> int:
        return self.table.size

    def reset(self, config: EnvConfig | None = None) -> np.ndarray:
        if config is not None:
            if (config.n_qubits, config.observation_mode, config.action_space_mode) != (
                    self.config.n_qubits, self.config.observation_mode, self.config.action_space_mode):
                raise ValueError("reset config must keep n_qubits and encoding modes")
            self.config = config
        cfg = self.config
        self.circuit = Circuit(cfg.n_qubits)
        self.state = qsim.zero_state(cfg.n_qubits)
        self.cost = 1.0 - qsim.fidelity(cfg.target, self.state)
        self.t = 0
        self.reward_sum = 0.0
        self.done = False
        self.done_reason = DONE_NONE
        return observe(self.state, cfg.observation_mode)

    def legal_mask(self) -> np.ndarray:
        return legal_mask(self.circuit.gates if self.circuit else (), self.table)

    def step(self, action_index: int) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode is finished; call reset()")
        if not 0 <= action_index < self.table.size:
            raise IndexError(f"action index {action_index} out of range")
        if not self.legal_mask()[action_index]:
            raise ValueError(f"action {action_index} is illegal after {self.circuit.gates[-1]}")
        cfg = self.config
        circuit = self.circuit.append(self.table[action_index])
        if circuit.n_rotations:
            circuit = tune_angles(circuit, cfg.target, cfg.tune_budget, cfg.tune_step)
        self.circuit = circuit
        self.state = qsim.run_circuit(circuit)
        prev, self.cost = self.cost, 1.0 - qsim.fidelity(cfg.target, self.state)
        self.t += 1
        reward, reason = shaped_reward(prev, self.cost, self.t, cfg.xi, cfg.max_steps, cfg.c_min)
        self.reward_sum += reward
        self.done = reason != DONE_NONE
        self.done_reason = reason
        return StepOutcome(observe(self.state, cfg.observation_mode), reward, self.cost,
                           self.done, reason)

    def record(self, epsilon: float) -> EpisodeRecord:
        cfg = self.config
        success = self.cost < cfg.xi
        optimal = bool(success and cfg.min_gate_count is not None
                       and len(self.circuit) == cfg.min_gate_count)
        return EpisodeRecord(self.t, float(self.cost), bool(success), optimal,
                             float(epsilon), cfg.stage_id, float(self.reward_sum))


# --- metrics ---------------------------------------------------------------

def run_metrics(records: Sequence[EpisodeRecord], window: int = 100) -> dict:
    if window < 1:
        raise ValueError("window must be >= 1")
    if not records:
        raise ValueError("no episode records")
    succ = np.array([r.success for r in records], dtype=float)
    opt = np.array([r.optimal for r in records], dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(succ)])
    idx = np.arange(len(succ))
    lo = np.maximum(0, idx - window + 1)
    curve = (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)
    return {
        "success_probability_curve": curve,
        "optimal_success_cumulative": np.cumsum(opt).astype(int),
        "r_success": float(succ.mean()),
        "r_optimal": float(opt.mean()),
    }
