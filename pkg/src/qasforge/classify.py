"""Iris benchmark: a linear baseline against hybrid circuit classifiers.

The hybrid model encodes the four standardized features as
RY(x_i + pi/2)|0> on four qubits (so <Z_i> = -sin x_i before the ansatz,
monotone around the feature mean), applies an ansatz circuit, reads out <Z_i> and maps those four
numbers to class logits with a linear head.  The ansatz is either random or
found by a DDQN agent that builds circuits gate by gate.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import approx, qsim
from .agents import AgentConfig, ExplorationSchedule, ReplayConfig, make_agent
from .env import enumerate_actions, legal_mask
from .qsim import Circuit

N_QUBITS = 4
MAX_DEPTH = 3
N_CLASSES = 3
LR = 5e-4
EPOCHS = 200
BATCH_SIZE = 16
SEARCH_EPOCHS = 30
VAL_FRACTION = 0.25
TEST_FRACTION = 0.2
SEARCH_BUDGET = 200
MAX_GATES = N_QUBITS * MAX_DEPTH
ENCODING_SHIFT = np.pi / 2
IRIS_COLUMNS = ("sepal_length", "sepal_width", "petal_length", "petal_width", "label")
MODEL_KINDS = ("classical", "random_ansatz", "discovered_ansatz")
PAULI = {"RX": np.array([[0, 1], [1, 0]], dtype=complex),
         "RY": np.array([[0, -1j], [1j, 0]]),
         "RZ": np.array([[1, 0], [0, -1]], dtype=complex)}


# --- data ------------------------------------------------------------------

@dataclass
class IrisData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    train_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None


def default_iris_path() -> Path:
    return Path(str(resources.files("qasforge") / "data" / "iris.csv"))


def read_iris_csv(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    feats, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != len(IRIS_COLUMNS):
            raise ValueError(f"{path}: expected {len(IRIS_COLUMNS)} columns {','.join(IRIS_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(IRIS_COLUMNS):
                raise ValueError(f"{path}: row {line}: expected {len(IRIS_COLUMNS)} columns, got {len(row)}")
            values = []
            for col, cell in zip(IRIS_COLUMNS, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: row {line}, column {col}: not a number: {cell!r}") from None
            if not np.all(np.isfinite(values[:4])):
                raise ValueError(f"{path}: row {line}: non-finite feature")
            label = values[4]
            if label not in (0.0, 1.0, 2.0):
                raise ValueError(f"{path}: row {line}, column label: expected 0, 1 or 2")
            feats.append(values[:4])
            labels.append(int(label))
    if not feats:
        raise ValueError(f"{path}: no data rows")
    return np.array(feats), np.array(labels)


def stratified_split(y, fraction, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffle; round(fraction * class size) of each class goes to the second part."""
    y = np.asarray(y)
    first, second = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        k = int(round(fraction * len(idx)))
        second.append(idx[:k])
        first.append(idx[k:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def standardize(x_fit, *others):
    mean = x_fit.mean(axis=0)
    std = x_fit.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std, [(x - mean) / std for x in (x_fit, *others)]


def load_iris(path=None, seed: int = 0, test_fraction: float = TEST_FRACTION) -> IrisData:
    """Stratified train/test split; scaling statistics come from train only."""
    x, y = read_iris_csv(path or default_iris_path())
    train_idx, test_idx = stratified_split(y, test_fraction, np.random.default_rng(seed))
    mean, std, (xtr, xte) = standardize(x[train_idx], x[test_idx])
    return IrisData(xtr, y[train_idx], xte, y[test_idx], mean, std, train_idx, test_idx)


def validation_split(data: IrisData, seed: int, fraction: float = VAL_FRACTION) -> IrisData:
    """Carve a stratified validation set out of the training part.

    The returned ``x_test``/``y_test`` hold the validation rows; the original
    test rows are not touched.
    """
    fit, val = stratified_split(data.y_train, fraction, np.random.default_rng([seed, 1]))
    return IrisData(data.x_train[fit], data.y_train[fit], data.x_train[val], data.y_train[val],
                    data.mean, data.std)


# --- models ----------------------------------------------------------------

def softmax_cross_entropy(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(np.mean(logp[np.arange(n), y]))
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


class QuantumLayer:
    """Angle encoding, ansatz, then <Z_i> on every qubit.

    Angle gradients use adjoint differentiation: one forward sweep caching
    states and one backward sweep carrying the co-state.
    """

    def __init__(self, circuit: Circuit):
        if circuit.n_qubits != N_QUBITS:
            raise ValueError(f"ansatz must act on {N_QUBITS} qubits")
        if circuit.depth() > MAX_DEPTH:
            raise ValueError(f"ansatz depth {circuit.depth()} exceeds {MAX_DEPTH}")
        self.circuit = circuit
        self.theta = circuit.theta.copy()
        self.signs = approx.z_signs(N_QUBITS)

    def current_circuit(self) -> Circuit:
        return self.circuit.with_theta(self.theta)

    def forward(self, x):
        angles = np.asarray(x, dtype=float) + ENCODING_SHIFT
        psi = approx.product_ry_states(angles).astype(complex)
        states = [psi]
        j = 0
        for g in self.circuit.gates:
            if g.is_rotation:
                psi = qsim.apply_single(psi, qsim.rotation_matrix(g.kind, self.theta[j]), g.qubit, N_QUBITS)
                j += 1
            else:
                psi = qsim.apply_cnot(psi, g.control, g.target, N_QUBITS)
            states.append(psi)
        z = (np.abs(psi) ** 2) @ self.signs
        return z, states

    def backward(self, states, dz):
        """Gradient of sum(dz * z) with respect to the ansatz angles."""
        psi = states[-1]
        lam = (dz @ self.signs.T) * psi
        grad = np.zeros_like(self.theta)
        j = len(self.theta) - 1
        for k in range(len(self.circuit.gates) - 1, -1, -1):
            g = self.circuit.gates[k]
            after = states[k + 1]
            if g.is_rotation:
                # dR/dtheta = -i/2 P R, so d<O>/dtheta = Im<lam|P|after> summed over the batch
                p_after = qsim.apply_single(after, PAULI[g.kind], g.qubit, N_QUBITS)
                grad[j] = np.sum(np.imag(np.conj(lam) * p_after))
                lam = qsim.apply_single(lam, qsim.rotation_matrix(g.kind, self.theta[j]).conj().T,
                                        g.qubit, N_QUBITS)
                j -= 1
            else:
                lam = qsim.apply_cnot(lam, g.control, g.target, N_QUBITS)
        return grad


class ClassifierModel:
    """Linear head over either raw features or circuit read-outs."""

    def __init__(self, kind: str, rng, circuit: Circuit | None = None, train_circuit: bool = True):
        if kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}")
        self.kind = kind
        self.layer = None if kind == "classical" else QuantumLayer(circuit)
        self.head = approx.Mlp([4, N_CLASSES], rng=rng)
        # zero start, as for plain logistic regression; a random start would
        # outweigh what a few hundred small AdamW steps can move
        for p in self.head.params:
            p[...] = 0.0
        self.train_circuit = train_circuit and self.layer is not None and self.layer.theta.size > 0

    @property
    def params(self):
        extra = [self.layer.theta] if self.train_circuit else []
        return extra + self.head.params

    @property
    def circuit(self) -> Circuit | None:
        return None if self.layer is None else self.layer.current_circuit()

    def features(self, x):
        return x if self.layer is None else self.layer.forward(x)[0]

    def logits(self, x):
        return self.head.predict(self.features(np.asarray(x, dtype=float)))

    def loss_and_grads(self, x, y):
        if self.layer is None:
            feats, states = x, None
        else:
            feats, states = self.layer.forward(x)
        out, tape = self.head.forward(feats)
        loss, dlogits = softmax_cross_entropy(out, y)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite classifier loss")
        if self.train_circuit:
            head_grads, dfeat = self.head.backward(tape, dlogits, input_grad=True)
            return loss, [self.layer.backward(states, dfeat)] + head_grads
        return loss, self.head.backward(tape, dlogits)


def random_ansatz(rng, n_draws: int = MAX_GATES) -> Circuit:
    """Random templates kept while the depth stays within the cap, random angles."""
    table = enumerate_actions(N_QUBITS)
    circ = Circuit(N_QUBITS)
    for _ in range(n_draws):
        g = table[int(rng.integers(len(table)))]
        if g.is_rotation:
            g = g.with_angle(float(rng.uniform(-np.pi, np.pi)))
        cand = circ.append(g)
        if cand.depth() <= MAX_DEPTH:
            circ = cand
    return circ


def train_model(model_kind: str, data: IrisData, seed: int, circuit: Circuit | None = None,
                epochs: int = EPOCHS, batch_size: int = BATCH_SIZE, lr: float = LR,
                train_circuit: bool = True) -> ClassifierModel:
    """Minibatch AdamW on softmax cross-entropy; deterministic given ``seed``.

    ``random_ansatz`` draws its circuit from ``seed`` unless one is given;
    ``discovered_ansatz`` requires ``circuit``.
    """
    rng = np.random.default_rng([seed, MODEL_KINDS.index(model_kind) if model_kind in MODEL_KINDS else 99])
    if model_kind == "random_ansatz" and circuit is None:
        circuit = random_ansatz(rng)
    if model_kind == "discovered_ansatz" and circuit is None:
        raise ValueError("discovered_ansatz needs a circuit")
    model = ClassifierModel(model_kind, rng, circuit, train_circuit)
    opt = approx.AdamW(model.params, lr=lr)
    n = len(data.y_train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            _, grads = model.loss_and_grads(data.x_train[idx], data.y_train[idx])
            opt.step(model.params, grads)
    return model


def evaluate_accuracy(model, x, y) -> float:
    """Fraction of rows whose argmax logit equals the label."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty split")
    logits = model.logits(x) if hasattr(model, "logits") else model(x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


# --- architecture search -----------------------------------------------------

class AnsatzSearchEnv:
    """Builds a 4-qubit ansatz one gate at a time under a depth cap.

    A rotation placed at position i from template a starts at the fixed angle
    ``angles[i, a]``, so each action sequence names exactly one circuit and
    the search covers starting angles as well as structure.
    The last action is STOP.  An episode ends on STOP, when no gate fits, or
    at ``MAX_GATES`` gates; the terminal reward is the validation accuracy of
    a briefly trained hybrid model, all earlier rewards are 0.
    """

    def __init__(self, evaluate, angles=None):
        self.table = enumerate_actions(N_QUBITS)
        self.n_templates = len(self.table)
        self.n_actions = self.n_templates + 1
        self.obs_dim = MAX_GATES * self.n_templates
        self.evaluate = evaluate
        self.angles = np.zeros((MAX_GATES, self.n_templates)) if angles is None else angles
        self.done = True

    def reset(self):
        self.circuit = Circuit(N_QUBITS)
        self.done = False
        self.accuracy = None
        return self._observe()

    def _observe(self):
        obs = np.zeros((MAX_GATES, self.n_templates))
        for i, g in enumerate(self.circuit.gates):
            obs[i, self.table.entries.index(g.with_angle(0.0) if g.is_rotation else g)] = 1.0
        return obs.ravel()

    def legal_mask(self):
        mask = np.zeros(self.n_actions, dtype=bool)
        if len(self.circuit) < MAX_GATES:
            base = legal_mask(self.circuit.gates, self.table)
            for i, g in enumerate(self.table.entries):
                mask[i] = base[i] and self.circuit.append(g).depth() <= MAX_DEPTH
        mask[-1] = len(self.circuit) > 0 or not mask[:-1].any()
        return mask

    def step(self, action):
        if self.done:
            raise RuntimeError("episode is finished; call reset()")
        mask = self.legal_mask()
        if not mask[action]:
            raise ValueError(f"action {action} is illegal here")
        if action < self.n_templates:
            g = self.table[action]
            if g.is_rotation:
                g = g.with_angle(float(self.angles[len(self.circuit), action]))
            self.circuit = self.circuit.append(g)
        finished = action == self.n_templates or not self.legal_mask()[:-1].any()
        reward = 0.0
        if finished:
            self.done = True
            self.accuracy = self.evaluate(self.circuit)
            reward = self.accuracy
        return self._observe(), reward, self.done


@dataclass
class SearchResult:
    circuit: Circuit
    val_accuracy: float
    candidates: int
    history: list = field(default_factory=list)
    warning: str | None = None


def search_agent_config() -> tuple[AgentConfig, ExplorationSchedule]:
    cfg = AgentConfig(algorithm="DDQN", approximator="classical", batch_size=32,
                      learning_starts=64, hidden=(64, 64), target_sync_every=10, lr=1e-3)
    return cfg, ExplorationSchedule(1.0, 0.05, 0.998)


def search_classifier_ansatz(data: IrisData, budget: int = SEARCH_BUDGET, seed: int = 0,
                             epochs: int = SEARCH_EPOCHS, agent=None) -> SearchResult:
    """Return the best circuit seen over ``budget`` candidate episodes.

    Each candidate is scored by training a hybrid model for ``epochs`` epochs
    on 75% of the training rows and measuring accuracy on the remaining 25%.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    split = validation_split(data, seed)
    cache = {}

    def evaluate(circuit):
        key = tuple(circuit.gates)
        if key not in cache:
            model = train_model("discovered_ansatz", split, seed, circuit, epochs=epochs)
            cache[key] = evaluate_accuracy(model, split.x_test, split.y_test)
        return cache[key]

    angle_rng = np.random.default_rng([seed, 11])
    env = AnsatzSearchEnv(evaluate, angle_rng.uniform(-np.pi, np.pi, size=(MAX_GATES, len(enumerate_actions(N_QUBITS)))))
    if agent is None:
        cfg, schedule = search_agent_config()
        agent = make_agent(env.obs_dim, env.n_actions, cfg, exploration=schedule,
                           replay=ReplayConfig(capacity=5000), rng=np.random.default_rng([seed, 7]))
    best, best_acc, history = None, -1.0, []
    for episode in range(1, budget + 1):
        obs = env.reset()
        mask = env.legal_mask()
        while not env.done:
            a = int(agent.act(obs, mask))
            nxt, r, done = env.step(a)
            next_mask = env.legal_mask() if not done else np.ones(env.n_actions, dtype=bool)
            agent.observe(obs, a, r, nxt, done, next_mask, mask=mask)
            obs, mask = nxt, next_mask
        agent.end_episode(episode)
        history.append({"episode": episode, "accuracy": env.accuracy, "gates": len(env.circuit)})
        if env.accuracy > best_acc:
            best, best_acc = env.circuit, env.accuracy
    warning = None
    if best is None:
        warning = "no valid circuit found within the budget"
        warnings.warn(warning)
        best, best_acc = Circuit(N_QUBITS), float("nan")
    return SearchResult(best, best_acc, budget, history, warning)


# --- benchmark ---------------------------------------------------------------

@dataclass
class ClassifyConfig:
    data: str | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    search_budget: int = SEARCH_BUDGET
    search_epochs: int = SEARCH_EPOCHS
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    lr: float = LR
    output: str = "classify_report.json"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds: need at least one seed")
        if self.search_budget < 1:
            raise ValueError("search_budget: must be >= 1")
        if self.epochs < 1 or self.search_epochs < 1:
            raise ValueError("epochs: must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.lr < 0:
            raise ValueError("lr: must be >= 0")


def run_seed(cfg: ClassifyConfig, seed: int) -> dict:
    data = load_iris(cfg.data, seed=seed)
    kw = dict(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr)
    classical = train_model("classical", data, seed, **kw)
    rand = train_model("random_ansatz", data, seed, **kw)
    found = search_classifier_ansatz(data, cfg.search_budget, seed, cfg.search_epochs)
    disc = train_model("discovered_ansatz", data, seed, found.circuit, **kw)
    return {
        "seed": seed,
        "classical_accuracy": evaluate_accuracy(classical, data.x_test, data.y_test),
        "random_ansatz_accuracy": evaluate_accuracy(rand, data.x_test, data.y_test),
        "discovered_ansatz_accuracy": evaluate_accuracy(disc, data.x_test, data.y_test),
        "search_val_accuracy": found.val_accuracy,
        "random_circuit": rand.circuit.to_json(),
        "discovered_circuit": found.circuit.to_json(),
        "warning": found.warning,
    }


def run_benchmark(cfg: ClassifyConfig, progress=None) -> dict:
    """Per-seed accuracies plus their means; the reported circuit is the
    discovered one with the best search validation score."""
    rows = []
    for seed in cfg.seeds:
        rows.append(run_seed(cfg, seed))
        if progress is not None:
            progress(rows[-1])
    best = max(rows, key=lambda r: r["search_val_accuracy"])
    mean = lambda key: float(np.mean([r[key] for r in rows]))
    return {
        "classical_accuracy": mean("classical_accuracy"),
        "random_ansatz_accuracy": mean("random_ansatz_accuracy"),
        "discovered_ansatz_accuracy": mean("discovered_ansatz_accuracy"),
        "discovered_circuit": {"n_qubits": N_QUBITS, "gates": best["discovered_circuit"]},
        "seeds": list(cfg.seeds),
        "per_seed": rows,
    }
