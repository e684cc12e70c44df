"""Small-register statevector simulation.

States are plain complex numpy arrays of length ``2**n``.  Qubit 0 is the most
significant bit of the basis index, so ``|10>`` on two qubits is index 2.
Batched states carry the basis axis last, shape ``(..., 2**n)``.

Rotations follow RX(t) = exp(-i t X / 2), RY(t) = exp(-i t Y / 2) and
RZ(t) = exp(-i t Z / 2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CNOT",)
MAX_UNITARY_QUBITS = 6
SVD_CUTOFF = 1e-12

SQRT1_2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class GateAction:
    """One gate of the action alphabet.

    Rotations use ``qubit`` and ``angle``; CNOT uses ``control`` and ``target``.
    """

    kind: str
    qubit: int | None = None
    angle: float = 0.0
    control: int | None = None
    target: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CNOT":
            if self.control is None or self.target is None:
                raise ValueError("CNOT needs control and target")
            if self.control == self.target:
                raise ValueError("CNOT control and target must differ")
        elif self.qubit is None:
            raise ValueError(f"{self.kind} needs a qubit index")

    @property
    def is_rotation(self) -> bool:
        return self.kind != "CNOT"

    @property
    def qubits(self) -> tuple[int, ...]:
        if self.kind == "CNOT":
            return (self.control, self.target)
        return (self.qubit,)

    def with_angle(self, angle: float) -> "GateAction":
        return replace(self, angle=float(angle))

    def same_template(self, other: "GateAction") -> bool:
        """True when both gates are the same slot, ignoring the angle."""
        return (self.kind, self.qubit, self.control, self.target) == (
            other.kind, other.qubit, other.control, other.target)

    def to_json(self) -> dict:
        if self.kind == "CNOT":
            return {"kind": "CNOT", "control": self.control, "target": self.target}
        return {"kind": self.kind, "qubit": self.qubit, "angle": self.angle}

    @classmethod
    def from_json(cls, d: dict) -> "GateAction":
        kind = d["kind"]
        if kind == "CNOT":
            return cls("CNOT", control=int(d["control"]), target=int(d["target"]))
        return cls(kind, qubit=int(d["qubit"]), angle=float(d.get("angle", 0.0)))


def rx(qubit, angle=0.0):
    return GateAction("RX", qubit=qubit, angle=float(angle))


def ry(qubit, angle=0.0):
    return GateAction("RY", qubit=qubit, angle=float(angle))


def rz(qubit, angle=0.0):
    return GateAction("RZ", qubit=qubit, angle=float(angle))


def cnot(control, target):
    return GateAction("CNOT", control=control, target=target)


@dataclass
class Circuit:
    n_qubits: int
    gates: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        self.gates = list(self.gates)
        for g in self.gates:
            check_gate(g, self.n_qubits)

    @property
    def theta(self) -> np.ndarray:
        """Angles of the rotation gates, in circuit order."""
        return np.array([g.angle for g in self.gates if g.is_rotation], dtype=float)

    @property
    def n_rotations(self) -> int:
        return sum(g.is_rotation for g in self.gates)

    def with_theta(self, theta) -> "Circuit":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_rotations,):
            raise ValueError(f"expected {self.n_rotations} angles, got {theta.shape}")
        it = iter(theta)
        gates = [g.with_angle(next(it)) if g.is_rotation else g for g in self.gates]
        return Circuit(self.n_qubits, gates)

    def append(self, gate: GateAction) -> "Circuit":
        return Circuit(self.n_qubits, self.gates + [gate])

    def depth(self) -> int:
        return circuit_depth(self.gates, self.n_qubits)

    def __len__(self):
        return len(self.gates)

    def to_json(self) -> list:
        return [g.to_json() for g in self.gates]

    @classmethod
    def from_json(cls, data: Iterable[dict], n_qubits: int) -> "Circuit":
        return cls(n_qubits, [GateAction.from_json(d) for d in data])


def circuit_depth(gates: Sequence[GateAction], n_qubits: int) -> int:
    """ASAP-scheduled depth: each gate occupies one layer on every qubit it touches."""
    level = [0] * n_qubits
    for g in gates:
        d = max(level[q] for q in g.qubits) + 1
        for q in g.qubits:
            level[q] = d
    return max(level) if level else 0


def check_gate(gate: GateAction, n_qubits: int) -> None:
    for q in gate.qubits:
        if not 0 <= q < n_qubits:
            raise ValueError(f"qubit index {q} out of range for {n_qubits} qubits")
    if gate.is_rotation and not math.isfinite(gate.angle):
        raise ValueError(f"non-finite rotation angle {gate.angle}")


def n_qubits_of(state: np.ndarray) -> int:
    dim = np.shape(state)[-1]
    n = int(dim).bit_length() - 1
    if n < 1 or 1 << n != dim:
        raise ValueError(f"state length {dim} is not a power of two >= 2")
    return n


def rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.array([[complex(c, -s), 0], [0, complex(c, s)]])
    raise ValueError(f"not a rotation: {kind!r}")


def gate_matrix(gate: GateAction) -> np.ndarray:
    """2x2 matrix for rotations, 4x4 (control is the high bit) for CNOT."""
    if gate.is_rotation:
        return rotation_matrix(gate.kind, gate.angle)
    return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


@lru_cache(maxsize=None)
def cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n_qubits)
    cbit = 1 << (n_qubits - 1 - control)
    tbit = 1 << (n_qubits - 1 - target)
    perm = np.where(idx & cbit, idx ^ tbit, idx)
    perm.setflags(write=False)
    return perm


def apply_single(states: np.ndarray, matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """Apply a 2x2 matrix to ``qubit`` of (batched) states; no validation."""
    lead = states.shape[:-1]
    left = 1 << qubit
    right = 1 << (n_qubits - 1 - qubit)
    out = np.matmul(matrix, states.reshape(lead + (left, 2, right)))
    return out.reshape(states.shape)


def apply_cnot(states: np.ndarray, control: int, target: int, n_qubits: int) -> np.ndarray:
    return states[..., cnot_permutation(n_qubits, control, target)]


def _apply(states, gate, n_qubits):
    if gate.is_rotation:
        return apply_single(states, rotation_matrix(gate.kind, gate.angle), gate.qubit, n_qubits)
    return apply_cnot(states, gate.control, gate.target, n_qubits)


def apply_gate(state: np.ndarray, gate: GateAction) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    n = n_qubits_of(state)
    check_gate(gate, n)
    return _apply(state, gate, n)


def zero_state(n_qubits: int) -> np.ndarray:
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[0] = 1.0
    return psi


def basis_state(bits: str) -> np.ndarray:
    psi = np.zeros(1 << len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return psi


def run_circuit(circuit: Circuit, initial: np.ndarray | None = None) -> np.ndarray:
    """Fold the gates over ``initial`` (default ``|0...0>``)."""
    n = circuit.n_qubits
    psi = zero_state(n) if initial is None else np.asarray(initial, dtype=complex)
    if psi.shape[-1] != 1 << n:
        raise ValueError("initial state does not match circuit width")
    for g in circuit.gates:
        check_gate(g, n)
        psi = _apply(psi, g, n)
    return psi


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    n = circuit.n_qubits
    if n > MAX_UNITARY_QUBITS:
        raise ValueError(f"unitary of {n} qubits exceeds the {MAX_UNITARY_QUBITS}-qubit cap")
    # rows are the images of basis states; transpose to get columns
    rows = run_circuit(circuit, np.eye(1 << n, dtype=complex))
    return rows.T.copy()


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    f = abs(np.vdot(a, b)) ** 2
    return float(min(max(f, 0.0), 1.0))


def hst_cost(u: np.ndarray, v: np.ndarray) -> float:
    """Hilbert-Schmidt test cost 1 - |Tr(V^dag U)|^2 / d^2."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    d = u.shape[0]
    overlap = abs(np.vdot(v, u)) ** 2 / d**2  # vdot conjugates v: Tr(V^dag U)
    return float(min(max(1.0 - overlap, 0.0), 1.0))


def empirical_hst_loss(circuit: Circuit, dataset) -> float:
    """1 - mean |<V psi_j| U |psi_j>|^2 over (psi_j, V psi_j) pairs."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    inputs = np.array([np.asarray(p, dtype=complex) for p, _ in dataset])
    targets = np.array([np.asarray(t, dtype=complex) for _, t in dataset])
    if inputs.shape[-1] != 1 << circuit.n_qubits or targets.shape != inputs.shape:
        raise ValueError("dataset states do not match circuit width")
    outs = run_circuit(circuit, inputs)
    overlaps = np.abs(np.sum(targets.conj() * outs, axis=-1)) ** 2
    return float(1.0 - overlaps.mean())


# --- target states ---------------------------------------------------------

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_BELL_PAULI = {"phi+": "I", "phi-": "Z", "psi+": "X", "psi-": "Y"}
TARGET_NAMES = tuple(_BELL_PAULI) + ("ghz",)


def _real_phase(psi):
    k = np.flatnonzero(np.abs(psi) > 1e-12)[0]
    return psi * (abs(psi[k]) / psi[k])


def make_target_state(name: str, n_qubits: int | None = None) -> np.ndarray:
    """Bell states ``phi+``, ``phi-``, ``psi+``, ``psi-`` or ``ghz``.

    Bell states are built as vectorised Paulis (P x I)|Omega> with the global
    phase fixed so the first nonzero amplitude is real and positive.  If
    ``n_qubits`` exceeds the natural width, the extra qubits are appended in
    ``|0>``.
    """
    key = name.lower()
    if key in _BELL_PAULI:
        omega = np.array([1, 0, 0, 1], dtype=complex) * SQRT1_2
        op = np.kron(_PAULI[_BELL_PAULI[key]], _PAULI["I"])
        psi = _real_phase(op @ omega)
        base = 2
    elif key == "ghz":
        base = 3 if n_qubits is None else n_qubits
        if base < 2:
            raise ValueError("GHZ needs at least 2 qubits")
        psi = np.zeros(1 << base, dtype=complex)
        psi[0] = psi[-1] = SQRT1_2
    else:
        raise ValueError(f"unknown target state {name!r}; expected one of {TARGET_NAMES}")
    if n_qubits is not None and n_qubits > base:
        psi = embed_state(psi, n_qubits)
    elif n_qubits is not None and n_qubits < base:
        raise ValueError(f"{name} needs at least {base} qubits")
    return psi


def embed_state(psi: np.ndarray, n_qubits: int) -> np.ndarray:
    """Tensor ``psi`` with ``|0>`` on trailing qubits up to ``n_qubits``."""
    extra = n_qubits - n_qubits_of(psi)
    if extra < 0:
        raise ValueError("cannot embed into a smaller register")
    return np.kron(psi, zero_state(extra)) if extra else np.asarray(psi, dtype=complex)


# --- serialisation ---------------------------------------------------------

def state_to_json(state: np.ndarray) -> dict:
    state = np.asarray(state, dtype=complex)
    return {"n_qubits": n_qubits_of(state),
            "amplitudes": [[float(a.real), float(a.imag)] for a in state]}


def state_from_json(d: dict) -> np.ndarray:
    amps = np.array([complex(re, im) for re, im in d["amplitudes"]])
    if len(amps) != 1 << int(d["n_qubits"]):
        raise ValueError("amplitude count does not match n_qubits")
    return amps


# --- matrix product states -------------------------------------------------

@dataclass
class MpsState:
    """Open-boundary MPS; ``site_tensors[k]`` has shape (left, 2, right)."""

    site_tensors: list

    @property
    def bond_dims(self) -> tuple[int, ...]:
        ts = self.site_tensors
        return (ts[0].shape[0],) + tuple(t.shape[2] for t in ts)

    @property
    def n_qubits(self) -> int:
        return len(self.site_tensors)


def mps_decompose(state: np.ndarray, max_bond: int) -> MpsState:
    """Left-to-right SVD sweep.

    Singular values below ``SVD_CUTOFF`` or past ``max_bond`` are dropped.  All
    tensors but the last are left isometries; the last carries the norm.
    """
    if max_bond < 1:
        raise ValueError("max_bond must be >= 1")
    psi = np.asarray(state, dtype=complex)
    n = n_qubits_of(psi)
    tensors = []
    rest = psi.reshape(1, -1)
    left = 1
    for _ in range(n - 1):
        mat = rest.reshape(left * 2, -1)
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        keep = max(1, min(max_bond, int(np.sum(s > SVD_CUTOFF))))
        u, s, vh = u[:, :keep], s[:keep], vh[:keep]
        tensors.append(u.reshape(left, 2, keep))
        rest = s[:, None] * vh
        left = keep
    tensors.append(rest.reshape(left, 2, 1))
    return MpsState(tensors)


def mps_contract(mps: MpsState) -> np.ndarray:
    ts = mps.site_tensors
    if not ts:
        raise ValueError("empty MPS")
    if ts[0].shape[0] != 1 or ts[-1].shape[2] != 1:
        raise ValueError("boundary bonds must be 1")
    out = ts[0].reshape(2, -1)
    for k, t in enumerate(ts[1:], start=1):
        if t.ndim != 3 or t.shape[1] != 2 or t.shape[0] != out.shape[1]:
            raise ValueError(f"inconsistent bond dimension at site {k}")
        out = (out @ t.reshape(t.shape[0], -1)).reshape(-1, t.shape[2])
    return out.reshape(-1)


def random_state(n_qubits: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=1 << n_qubits) + 1j * rng.normal(size=1 << n_qubits)
    return psi / np.linalg.norm(psi)
