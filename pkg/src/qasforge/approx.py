"""Function approximators: a ReLU MLP and a simulated variational circuit.

Both expose the same surface so agents can swap them freely::

    y, tape = model.forward(x)
    grads = model.backward(tape, dy)                  # aligned with model.params
    grads, dx = model.backward(tape, dy, input_grad=True)

``x`` may be a single feature vector or a batch with features on the last axis.
"""
from __future__ import annotations

import copy
import math

import numpy as np

from . import qsim

SCHEMA = "qasforge.model"
SCHEMA_VERSION = 1
HIDDEN = (30, 30, 30)


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return (x[None, :], True) if x.ndim == 1 else (x, False)


class Mlp:
    """Dense network, ReLU hidden layers, linear output."""

    kind = "mlp"

    def __init__(self, layer_sizes, rng=None, activation="relu"):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.activation = activation
        rng = np.random.default_rng(rng)
        self.params = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def forward(self, x):
        h, single = _as_batch(x)
        if h.shape[-1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} features, got {h.shape[-1]}")
        acts = [h]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            h = h @ self.params[2 * i] + self.params[2 * i + 1]
            if i < n_layers - 1 and self.activation == "relu":
                h = np.maximum(h, 0.0)
            acts.append(h)
        out = h[0] if single else h
        return out, (acts, single)

    def backward(self, tape, dy, input_grad=False):
        acts, single = tape
        g = np.asarray(dy, dtype=float)
        if single:
            g = g[None, :]
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1 and self.activation == "relu":
                g = g * (acts[i + 1] > 0)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or input_grad:
                g = g @ self.params[2 * i].T
        if input_grad:
            return grads, (g[0] if single else g)
        return grads

    def predict(self, x):
        return self.forward(x)[0]

    def config(self):
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation}

    def copy(self):
        return copy.deepcopy(self)

    def set_params(self, params):
        for p, q in zip(self.params, params):
            p[...] = q


def mlp_eval(model: Mlp, x):
    return model.forward(x)


# --- optimiser -------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay; updates parameter arrays in place."""

    def __init__(self, params, lr=5e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(grads) != len(params):
            raise ValueError("parameter/gradient count mismatch")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient; batch rejected")
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_dict(self):
        return {"lr": self.lr, "betas": [self.beta1, self.beta2], "eps": self.eps,
                "weight_decay": self.weight_decay, "t": self.t,
                "m": [m.tolist() for m in self.m], "v": [v.tolist() for v in self.v]}


def adamw_step(params, grads, opt: AdamW):
    return opt.step(params, grads)


# --- variational circuit ---------------------------------------------------

# near-identity start keeps <Z_i> sensitive to the encoded input
VQC_INIT_SPREAD = 0.1


def compression_matrix(in_dim: int, n_qubits: int) -> np.ndarray:
    """Fixed map from ``in_dim`` features to ``n_qubits`` angles.

    Shorter inputs are cycled (angle i reads feature i mod in_dim).  Longer
    inputs are folded: angle i is pi/k times the sum of features j with
    j mod n_qubits == i, where k = ceil(in_dim / n_qubits).  Features in
    [-1, 1] (state amplitudes) thus span the full rotation range.
    """
    c = np.zeros((n_qubits, in_dim))
    if in_dim > n_qubits:
        k = -(-in_dim // n_qubits)
        for j in range(in_dim):
            c[j % n_qubits, j] = math.pi / k
    elif in_dim == n_qubits:
        c[...] = np.eye(n_qubits)
    else:
        for i in range(n_qubits):
            c[i, i % in_dim] = 1.0
    return c


def product_ry_states(angles: np.ndarray) -> np.ndarray:
    """Batch of RY(angle_i)|0> product states, shape (B, 2**n), real."""
    b, n = angles.shape
    c, s = np.cos(angles / 2), np.sin(angles / 2)
    psi = np.ones((b, 1))
    for i in range(n):
        psi = (psi[:, :, None] * np.stack([c[:, i], s[:, i]], axis=1)[:, None, :]).reshape(b, -1)
    return psi


def z_signs(n_qubits: int) -> np.ndarray:
    """(2**n, n) matrix of Z_i eigenvalues per basis state (qubit 0 = MSB)."""
    idx = np.arange(1 << n_qubits)[:, None]
    bits = (idx >> (n_qubits - 1 - np.arange(n_qubits))[None, :]) & 1
    return 1.0 - 2.0 * bits


def encode_observation(x, n_qubits: int = 6) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    angles = compression_matrix(len(x), n_qubits) @ x
    return product_ry_states(angles[None, :])[0].astype(complex)


class Vqc:
    """Angle-encoded circuit with trainable RY/RZ layers and a ring of CNOTs.

    Outputs are ``readout(<Z_0>, ..., <Z_{n-1}>)`` with a trainable affine
    readout.  Expectations are exact (no shot noise).
    """

    kind = "vqc"

    def __init__(self, in_dim, out_dim, n_qubits=6, depth=3, rng=None):
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.n_qubits, self.depth = int(n_qubits), int(depth)
        rng = np.random.default_rng(rng)
        bound = 1.0 / math.sqrt(self.n_qubits)
        self.params = [
            rng.uniform(-VQC_INIT_SPREAD, VQC_INIT_SPREAD, size=(self.depth, 2, self.n_qubits)),
            rng.uniform(-bound, bound, size=(self.n_qubits, self.out_dim)),
            rng.uniform(-bound, bound, size=self.out_dim),
        ]
        self._compress = compression_matrix(self.in_dim, self.n_qubits)
        self._zs = z_signs(self.n_qubits)
        self._cache_key = None
        self._cache_u = None

    def _gates(self):
        """(kind, qubit or (control, target), flat parameter index) sequence."""
        n = self.n_qubits
        seq = []
        for layer in range(self.depth):
            for axis, kind in enumerate(("RY", "RZ")):
                for q in range(n):
                    seq.append((kind, q, (layer * 2 + axis) * n + q))
            for q in range(n):
                seq.append(("CNOT", (q, (q + 1) % n), None))
        return seq

    def _apply_rows(self, rows, kind, q, angle, transpose=False):
        n = self.n_qubits
        if kind == "CNOT":
            return qsim.apply_cnot(rows, q[0], q[1], n)
        m = qsim.rotation_matrix(kind, angle)
        return qsim.apply_single(rows, m.T if transpose else m, q, n)

    def unitary(self, angles=None):
        angles = self.params[0] if angles is None else angles
        key = angles.tobytes()
        if key == self._cache_key:
            return self._cache_u
        flat = angles.reshape(-1)
        rows = np.eye(1 << self.n_qubits, dtype=complex)
        for kind, q, pi in self._gates():
            rows = self._apply_rows(rows, kind, q, None if pi is None else flat[pi])
        u = rows.T.copy()
        self._cache_key, self._cache_u = key, u
        return u

    def shifted_unitaries(self):
        """Unitaries with each circuit angle shifted by +pi/2 and -pi/2.

        Returns an array (n_params, 2, d, d) where [k, 0] is the +shift.
        """
        flat = self.params[0].reshape(-1)
        gates = self._gates()
        d = 1 << self.n_qubits
        # prefix[k] holds P_k^T (rows are images of basis states under gates < k)
        prefix = []
        rows = np.eye(d, dtype=complex)
        for kind, q, pi in gates:
            prefix.append(rows)
            rows = self._apply_rows(rows, kind, q, None if pi is None else flat[pi])
        out = np.empty((flat.size, 2, d, d), dtype=complex)
        suffix = np.eye(d, dtype=complex)  # S_k = product of gates after k
        for k in range(len(gates) - 1, -1, -1):
            kind, q, pi = gates[k]
            if pi is not None:
                for s, shift in enumerate((math.pi / 2, -math.pi / 2)):
                    shifted = self._apply_rows(prefix[k], kind, q, flat[pi] + shift)
                    out[pi, s] = suffix @ shifted.T
            suffix = self._apply_rows(suffix, kind, q, None if pi is None else flat[pi],
                                      transpose=True)
        return out

    def _angles(self, x):
        return x @ self._compress.T

    def forward(self, x):
        xb, single = _as_batch(x)
        if xb.shape[-1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} features, got {xb.shape[-1]}")
        angles = self._angles(xb)
        psi = product_ry_states(angles)
        out = psi @ self.unitary().T
        z = (np.abs(out) ** 2) @ self._zs
        y = z @ self.params[1] + self.params[2]
        return (y[0] if single else y), (angles, psi, z, single)

    def expectations(self, x):
        """Pre-readout <Z_i> values, in [-1, 1]."""
        z = self.forward(x)[1][2]
        return z[0] if np.ndim(x) == 1 else z

    def backward(self, tape, dy, input_grad=False):
        angles, psi, z, single = tape
        g = np.asarray(dy, dtype=float)
        if single:
            g = g[None, :]
        d_w = z.T @ g
        d_b = g.sum(axis=0)
        dz = g @ self.params[1].T
        weights = dz @ self._zs.T  # (B, d): cotangent of each basis probability
        us = self.shifted_unitaries()
        k, _, d, _ = us.shape
        # psi is real, so split the stacked unitaries instead of forming complex amplitudes
        stacked = us.reshape(-1, d)
        re = psi @ np.ascontiguousarray(stacked.real.T)
        im = psi @ np.ascontiguousarray(stacked.imag.T)
        probs = (re * re + im * im).reshape(len(psi), 2 * k, d)
        e = np.einsum("bj,bkj->k", weights, probs, optimize=True).reshape(k, 2)
        d_theta = ((e[:, 0] - e[:, 1]) / 2).reshape(self.params[0].shape)
        grads = [d_theta, d_w, d_b]
        if not input_grad:
            return grads
        u = self.unitary()
        n = self.n_qubits
        d_ang = np.empty_like(angles)
        for i in range(n):
            vals = []
            for shift in (math.pi / 2, -math.pi / 2):
                a = angles.copy()
                a[:, i] += shift
                p = np.abs(product_ry_states(a) @ u.T) ** 2
                vals.append(np.sum(weights * p, axis=1))
            d_ang[:, i] = (vals[0] - vals[1]) / 2
        dx = d_ang @ self._compress
        return grads, (dx[0] if single else dx)

    def predict(self, x):
        return self.forward(x)[0]

    def config(self):
        return {"in_dim": self.in_dim, "out_dim": self.out_dim,
                "n_qubits": self.n_qubits, "depth": self.depth}

    def copy(self):
        return copy.deepcopy(self)

    def set_params(self, params):
        for p, q in zip(self.params, params):
            p[...] = q


def vqc_eval(model: Vqc, x):
    return model.predict(x)


def vqc_grad(model: Vqc, x, upstream):
    _, tape = model.forward(x)
    return model.backward(tape, upstream)


def make_network(kind, in_dim, out_dim, rng=None, hidden=HIDDEN, vqc_depth=3, vqc_qubits=6):
    if kind == "classical":
        return Mlp((in_dim, *hidden, out_dim), rng=rng)
    if kind == "quantum":
        return Vqc(in_dim, out_dim, n_qubits=vqc_qubits, depth=vqc_depth, rng=rng)
    raise ValueError(f"unknown approximator kind {kind!r}")


# --- checkpoints -----------------------------------------------------------

def model_to_json(model) -> dict:
    return {
        "schema": SCHEMA, "version": SCHEMA_VERSION, "kind": model.kind,
        "config": model.config(),
        "params": [{"shape": list(p.shape), "data": p.reshape(-1).tolist()} for p in model.params],
    }


def model_from_json(d: dict):
    if d.get("schema") != SCHEMA or d.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {d.get('schema')!r} v{d.get('version')}")
    cfg = d["config"]
    if d["kind"] == "mlp":
        model = Mlp(cfg["layer_sizes"], activation=cfg["activation"])
    elif d["kind"] == "vqc":
        model = Vqc(cfg["in_dim"], cfg["out_dim"], cfg["n_qubits"], cfg["depth"])
    else:
        raise ValueError(f"unknown model kind {d['kind']!r}")
    if len(d["params"]) != len(model.params):
        raise ValueError("parameter count mismatch")
    for p, entry in zip(model.params, d["params"]):
        if list(p.shape) != entry["shape"]:
            raise ValueError(f"shape mismatch {entry['shape']} vs {list(p.shape)}")
        p[...] = np.asarray(entry["data"], dtype=float).reshape(p.shape)
    return model
