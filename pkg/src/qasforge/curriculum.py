"""Curriculum ladder, quantum-kernel task weights and stage promotion."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qsim
from .env import EpisodeRecord, minimal_gate_count

RIDGE = 1e-6


@dataclass
class CurriculumStage:
    stage_id: int
    target: str
    xi: float
    max_steps: int
    n_qubits: int | None = None
    min_gate_count: int | None = None
    window: int = 100
    promote_threshold: float = 0.9

    def __post_init__(self):
        if self.n_qubits is None:
            self.n_qubits = 3 if self.target.lower() == "ghz" else 2
        if self.min_gate_count is None:
            self.min_gate_count = minimal_gate_count(self.target, self.n_qubits)
        if not 0.0 < self.xi < 1.0:
            raise ValueError(f"xi: must lie in (0, 1), got {self.xi}")
        if self.max_steps < 1:
            raise ValueError("max_steps: must be >= 1")

    def target_state(self, register: int | None = None) -> np.ndarray:
        """Target on ``register`` qubits, padding unused qubits with |0>."""
        psi = qsim.make_target_state(self.target, self.n_qubits)
        return qsim.embed_state(psi, register) if register else psi

    def to_json(self):
        return {"target": self.target, "xi": self.xi, "max_steps": self.max_steps,
                "n_qubits": self.n_qubits, "min_gate_count": self.min_gate_count}


def default_ladder() -> list[CurriculumStage]:
    return [
        CurriculumStage(0, "phi+", xi=0.1, max_steps=10),
        CurriculumStage(1, "phi+", xi=0.01, max_steps=10),
        CurriculumStage(2, "ghz", xi=0.01, max_steps=20, n_qubits=3),
    ]


def check_ladder(stages: Sequence[CurriculumStage]) -> None:
    """Stages must not get easier: qubit count non-decreasing, then xi non-increasing."""
    for a, b in zip(stages, stages[1:]):
        if (b.n_qubits, -b.xi) < (a.n_qubits, -a.xi):
            raise ValueError(f"stage {b.stage_id} is easier than stage {a.stage_id}")


# --- task datasets and kernel features --------------------------------------

@dataclass
class TaskDataset:
    """Pairs of (input, target) density matrices."""

    pairs: list = field(default_factory=list)

    def __post_init__(self):
        for x, y in self.pairs:
            for rho in (x, y):
                if abs(np.trace(rho) - 1) > 1e-10 or np.max(np.abs(rho - rho.conj().T)) > 1e-10:
                    raise ValueError("dataset entries must be Hermitian with unit trace")

    def __len__(self):
        return len(self.pairs)

    @property
    def xs(self):
        return np.array([x for x, _ in self.pairs])

    @property
    def ys(self):
        return np.array([y for _, y in self.pairs])


def density(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def perturb(psi, rng, noise_std=0.1):
    """Random local RX, RY, RZ rotations with angles ~ Normal(0, noise_std**2)."""
    n = qsim.n_qubits_of(psi)
    out = np.asarray(psi, dtype=complex)
    for q in range(n):
        for kind in qsim.ROTATIONS:
            out = qsim.apply_single(out, qsim.rotation_matrix(kind, rng.normal(0.0, noise_std)), q, n)
    return out


def make_task_dataset(target, n_pairs, rng, noise_std=0.1) -> TaskDataset:
    """Noisy copies of (|0...0>, target) as density-matrix pairs."""
    target = np.asarray(target, dtype=complex)
    zero = qsim.zero_state(qsim.n_qubits_of(target))
    pairs = [(density(perturb(zero, rng, noise_std)), density(perturb(target, rng, noise_std)))
             for _ in range(n_pairs)]
    return TaskDataset(pairs)


def kernel_feature(x, y, anchor_x, anchor_y) -> float:
    """Tr[x anchor_x] * Tr[y anchor_y]."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != np.shape(anchor_x) or y.shape != np.shape(anchor_y):
        raise ValueError("dimension mismatch")
    return float(np.real(np.trace(x @ anchor_x)) * np.real(np.trace(y @ anchor_y)))


def kernel_features(xs, ys, anchor_xs, anchor_ys) -> np.ndarray:
    """Matrix of kernel features, rows = data pairs, columns = anchors."""
    xs, ys = np.asarray(xs), np.asarray(ys)
    if xs.shape[1:] != np.shape(anchor_xs)[1:] or ys.shape[1:] != np.shape(anchor_ys)[1:]:
        raise ValueError("dimension mismatch")
    tx = np.einsum("nij,lji->nl", xs, anchor_xs).real
    ty = np.einsum("nij,lji->nl", ys, anchor_ys).real
    return tx * ty


@dataclass
class DensityRatioModel:
    alpha: np.ndarray
    anchor_xs: np.ndarray
    anchor_ys: np.ndarray

    def features(self, dataset: TaskDataset) -> np.ndarray:
        return kernel_features(dataset.xs, dataset.ys, self.anchor_xs, self.anchor_ys)

    def __call__(self, dataset: TaskDataset) -> np.ndarray:
        return self.features(dataset) @ self.alpha


def estimate_density_ratio(source: TaskDataset, reference: TaskDataset,
                           ridge: float = RIDGE) -> DensityRatioModel:
    """Linear ratio model over kernel features anchored at ``source`` pairs.

    The coefficients solve the ridge-regularised least-squares problem that
    drives the model's mean response on ``reference`` pairs to 1:
    (Phi^T Phi / N + ridge I) alpha = Phi^T 1 / N.
    """
    if not len(source) or not len(reference):
        raise ValueError("datasets must be non-empty")
    ax, ay = source.xs, source.ys
    phi = kernel_features(reference.xs, reference.ys, ax, ay)
    if not np.any(np.abs(phi) > 0):
        raise ValueError("degenerate kernel features: reference is orthogonal to every anchor")
    n, k = phi.shape
    alpha = np.linalg.solve(phi.T @ phi / n + ridge * np.eye(k), phi.T @ np.ones(n) / n)
    return DensityRatioModel(alpha, ax, ay)


def curriculum_weights(stages, datasets: Sequence[TaskDataset], ratio_models) -> np.ndarray:
    """Weight c_m = mean ratio over auxiliary dataset m, clamped at 0.

    ``stages`` lists the auxiliary stages (or None), ``datasets`` holds one
    dataset per auxiliary stage and ``ratio_models`` is one model shared by
    all of them or one per task.
    """
    if stages is not None and len(stages) != len(datasets):
        raise ValueError(f"missing dataset: {len(stages)} stages but {len(datasets)} datasets")
    if isinstance(ratio_models, DensityRatioModel):
        ratio_models = [ratio_models] * len(datasets)
    if len(ratio_models) != len(datasets):
        raise ValueError("need one ratio model per auxiliary dataset")
    out = []
    for i, (ds, model) in enumerate(zip(datasets, ratio_models)):
        if ds is None or not len(ds):
            raise ValueError(f"missing dataset for auxiliary task {i}")
        out.append(max(0.0, float(np.mean(model(ds)))))
    return np.array(out)


def stage_weights(stages: Sequence[CurriculumStage], rng, n_pairs=16, noise_std=0.1):
    """Weights for every stage of a ladder; the last (main) stage gets 1."""
    register = max(s.n_qubits for s in stages)
    data = [make_task_dataset(s.target_state(register), n_pairs, rng, noise_std) for s in stages]
    main = data[-1]
    model = estimate_density_ratio(main, main)
    aux = curriculum_weights(stages[:-1], data[:-1], model) if len(stages) > 1 else np.array([])
    return np.append(aux, 1.0)


# --- promotion ---------------------------------------------------------------

def advance_stage(history: Sequence[EpisodeRecord], stage: CurriculumStage,
                  is_final: bool = False) -> str:
    """'promote' once the trailing window of this stage is at least 90% solved."""
    if is_final or len(history) < stage.window:
        return "stay"
    recent = history[-stage.window:]
    rate = sum(r.success for r in recent) / stage.window
    return "promote" if rate >= stage.promote_threshold else "stay"


class CurriculumScheduler:
    """Tracks the active stage; ``update`` returns True on promotion."""

    def __init__(self, stages: Sequence[CurriculumStage]):
        if not stages:
            raise ValueError("empty stage ladder")
        check_ladder(stages)
        self.stages = list(stages)
        self.index = 0
        self.history = []

    @property
    def stage(self) -> CurriculumStage:
        return self.stages[self.index]

    @property
    def is_final(self) -> bool:
        return self.index == len(self.stages) - 1

    def update(self, record: EpisodeRecord) -> bool:
        self.history.append(record)
        if advance_stage(self.history, self.stage, self.is_final) == "promote":
            self.index += 1
            self.history = []
            return True
        return False
