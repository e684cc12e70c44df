import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qasforge import approx as A
from qasforge import qsim


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def fd_grads(model, x, upstream, h=1e-5):
    out = []
    for p in model.params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            plus = np.sum(model.predict(x) * upstream)
            p[idx] = old - h
            minus = np.sum(model.predict(x) * upstream)
            p[idx] = old
            g[idx] = (plus - minus) / (2 * h)
        out.append(g)
    return out


# --- mlp -----------------------------------------------------------------------

def test_mlp_zero_weights_give_zero():
    m = A.Mlp((4, 30, 30, 30, 3), rng=0)
    m.set_params([np.zeros_like(p) for p in m.params])
    assert np.array_equal(m.predict(np.ones(4)), np.zeros(3))


def test_mlp_single_linear_layer():
    m = A.Mlp((1, 1), activation="identity")
    m.set_params([np.array([[2.0]]), np.array([0.0])])
    assert m.predict(np.array([3.0]))[0] == 6.0


def test_mlp_errors():
    m = A.Mlp((3, 2), rng=0)
    with pytest.raises(ValueError):
        m.forward(np.ones(4))
    with pytest.raises(ValueError):
        m.forward(np.array([1.0, np.nan, 0.0]))


def test_mlp_gradients_match_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        sizes = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(2, 5)))]
        m = A.Mlp(sizes, rng=rng)
        x = rng.normal(size=(int(rng.integers(1, 4)), sizes[0]))
        up = rng.normal(size=(len(x), sizes[-1]))
        _, tape = m.forward(x)
        grads, dx = m.backward(tape, up, input_grad=True)
        for g, f in zip(grads, fd_grads(m, x, up)):
            worst = max(worst, rel_err(g, f))
        # input gradient too
        fdx = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += 1e-5
            xm[idx] -= 1e-5
            fdx[idx] = (np.sum(m.predict(xp) * up) - np.sum(m.predict(xm) * up)) / 2e-5
        worst = max(worst, rel_err(dx, fdx))
    assert worst < 1e-6


def test_default_network_shape():
    m = A.make_network("classical", 8, 8, rng=0)
    assert m.layer_sizes == (8, 30, 30, 30, 8)
    assert all(np.all(np.abs(p) <= 1 / math.sqrt(fi) + 1e-15)
               for p, fi in zip(m.params, [8, 8, 30, 30, 30, 30, 30, 30]))


# --- adamw ---------------------------------------------------------------------

def test_adamw_zero_grad_is_fixed_point():
    p = [np.array([1.0, -2.0])]
    opt = A.AdamW(p, weight_decay=0.0)
    for _ in range(5):
        A.adamw_step(p, [np.zeros(2)], opt)
    assert np.array_equal(p[0], [1.0, -2.0]) and opt.t == 5


def test_adamw_first_step_magnitude():
    p = [np.zeros(3)]
    opt = A.AdamW(p, lr=5e-4, weight_decay=0.0)
    A.adamw_step(p, [np.array([0.3, -7.0, 1e-2])], opt)
    assert np.allclose(p[0], [-5e-4, 5e-4, -5e-4], rtol=1e-5)


def test_adamw_decoupled_decay():
    p = [np.array([2.0])]
    opt = A.AdamW(p, lr=5e-4, weight_decay=0.01)
    A.adamw_step(p, [np.zeros(1)], opt)
    assert p[0][0] == pytest.approx(2.0 * (1 - 5e-4 * 0.01), abs=1e-15)


def test_adamw_rejects_bad_grads():
    p = [np.zeros(2)]
    opt = A.AdamW(p)
    with pytest.raises(FloatingPointError):
        opt.step(p, [np.array([np.inf, 0.0])])
    with pytest.raises(ValueError):
        opt.step(p, [np.zeros(3)])
    assert opt.t == 0 and np.array_equal(p[0], [0, 0])


def test_adamw_deterministic(rng):
    g = [rng.normal(size=(3, 2))]
    runs = []
    for _ in range(2):
        p = [np.ones((3, 2))]
        opt = A.AdamW(p)
        for _ in range(3):
            opt.step(p, g)
        runs.append(p[0].copy())
        assert all(m.shape == p[0].shape for m in opt.m + opt.v)
    assert np.array_equal(*runs)


# --- encoding ------------------------------------------------------------------

def test_encode_zero_input():
    psi = A.encode_observation(np.zeros(8))
    assert np.array_equal(psi, qsim.zero_state(6))


def test_encode_pi_flips_qubit_zero():
    x = np.zeros(6)
    x[0] = math.pi
    psi = A.encode_observation(x)
    z = (np.abs(psi) ** 2) @ A.z_signs(6)
    assert z[0] == pytest.approx(-1.0, abs=1e-12)
    assert np.allclose(z[1:], 1.0)


def test_encode_long_input_deterministic(rng):
    x = rng.normal(size=16)
    assert np.array_equal(A.encode_observation(x), A.encode_observation(x.copy()))
    assert np.linalg.norm(A.encode_observation(x)) == pytest.approx(1.0)


def test_encode_folds_long_inputs():
    # 8 features on 6 qubits: k = 2, angle 0 = pi/2 * (x0 + x6), angle 2 = pi/2 * x2
    x = np.zeros(8)
    x[0], x[6], x[2] = 0.25, 0.75, 1.0
    z = (np.abs(A.encode_observation(x)) ** 2) @ A.z_signs(6)
    assert np.allclose(z, [0.0, 1.0, 0.0, 1.0, 1.0, 1.0], atol=1e-12)


def test_encode_matches_qsim_rotations(rng):
    x = rng.uniform(-3, 3, size=6)
    c = qsim.Circuit(6, [qsim.ry(i, x[i]) for i in range(6)])
    assert np.allclose(A.encode_observation(x), qsim.run_circuit(c))


# --- vqc -----------------------------------------------------------------------

def test_vqc_zero_params_zero_input():
    m = A.Vqc(6, 2, rng=0)
    m.params[0][:] = 0
    assert np.allclose(m.expectations(np.zeros(6)), 1.0)


def test_vqc_zero_readout():
    m = A.Vqc(5, 3, rng=1)
    m.params[1][:] = 0
    m.params[2][:] = 0
    assert np.array_equal(m.predict(np.arange(5.0)), np.zeros(3))


def single_ry_model(theta):
    m = A.Vqc(6, 1, depth=1, rng=0)
    m.params[0][:] = 0
    m.params[0][0, 0, 0] = theta
    m.params[1][:] = 0
    m.params[1][1, 0] = 1.0  # read <Z_1>
    m.params[2][:] = 0
    return m


@pytest.mark.parametrize("theta", [0.0, 0.4, math.pi / 2, 2.5])
def test_vqc_single_ry_cos(theta):
    # the CNOT ring copies qubit 0 onto qubit 1; the closing CNOT(5, 0) then
    # moves the parity onto qubit 0, so cos(theta) is read on qubit 1
    m = single_ry_model(theta)
    z = m.expectations(np.zeros(6))
    assert z[1] == pytest.approx(math.cos(theta), abs=1e-12)
    gates = [qsim.ry(0, theta)] + [qsim.cnot(q, (q + 1) % 6) for q in range(6)]
    psi = qsim.run_circuit(qsim.Circuit(6, gates))
    assert np.allclose(z, (np.abs(psi) ** 2) @ A.z_signs(6), atol=1e-12)


@pytest.mark.parametrize("theta,expected", [(0.0, 0.0), (math.pi / 2, -1.0)])
def test_vqc_single_ry_gradient(theta, expected):
    m = single_ry_model(theta)
    grads = A.vqc_grad(m, np.zeros(6), np.ones(1))
    assert grads[0][0, 0, 0] == pytest.approx(expected, abs=1e-12)


def test_vqc_gradients_match_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        in_dim = int(rng.integers(1, 9))
        m = A.Vqc(in_dim, int(rng.integers(1, 4)), n_qubits=6, depth=int(rng.integers(1, 3)), rng=rng)
        x = rng.normal(size=(2, in_dim))
        up = rng.normal(size=(2, m.out_dim))
        grads = A.vqc_grad(m, x, up)
        # circuit angles only for a random subset, full readout
        fd = fd_grads_subset(m, x, up, rng)
        for (pi, idx), f in fd.items():
            worst = max(worst, rel_err(grads[pi][idx], f))
    assert worst < 1e-6


def fd_grads_subset(model, x, up, rng, h=1e-5, n_angles=4):
    picks = [(0, tuple(int(rng.integers(s)) for s in model.params[0].shape)) for _ in range(n_angles)]
    picks += [(1, idx) for idx in np.ndindex(model.params[1].shape)]
    picks += [(2, idx) for idx in np.ndindex(model.params[2].shape)]
    out = {}
    for pi, idx in picks:
        p = model.params[pi]
        old = p[idx]
        p[idx] = old + h
        plus = np.sum(model.predict(x) * up)
        p[idx] = old - h
        minus = np.sum(model.predict(x) * up)
        p[idx] = old
        out[(pi, idx)] = (plus - minus) / (2 * h)
    return out


def test_vqc_input_gradient(rng):
    m = A.Vqc(8, 2, rng=3)
    x = rng.normal(size=(3, 8))
    up = rng.normal(size=(3, 2))
    _, tape = m.forward(x)
    _, dx = m.backward(tape, up, input_grad=True)
    fdx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += 1e-5
        xm[idx] -= 1e-5
        fdx[idx] = (np.sum(m.predict(xp) * up) - np.sum(m.predict(xm) * up)) / 2e-5
    assert rel_err(dx, fdx) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=10), st.integers(0, 2**16))
def test_vqc_expectations_bounded(x, seed):
    m = A.Vqc(len(x), 2, rng=seed)
    z = m.expectations(np.array(x))
    assert z.shape == (6,) and np.all(np.abs(z) <= 1 + 1e-12)


def test_vqc_shapes_match_mlp():
    x1, xb = np.ones(8), np.ones((5, 8))
    for kind in ("classical", "quantum"):
        m = A.make_network(kind, 8, 8, rng=0)
        assert m.predict(x1).shape == (8,)
        assert m.predict(xb).shape == (5, 8)
        _, tape = m.forward(xb)
        grads = m.backward(tape, np.ones((5, 8)))
        assert [g.shape for g in grads] == [p.shape for p in m.params]
    with pytest.raises(ValueError):
        A.make_network("analog", 8, 8)


# --- checkpoints ---------------------------------------------------------------

@pytest.mark.parametrize("kind", ["classical", "quantum"])
def test_model_json_roundtrip(kind, rng):
    m = A.make_network(kind, 5, 3, rng=7)
    again = A.model_from_json(json.loads(json.dumps(A.model_to_json(m))))
    x = rng.normal(size=(4, 5))
    assert np.array_equal(m.predict(x), again.predict(x))


def test_model_json_rejects_bad_schema():
    d = A.model_to_json(A.Mlp((2, 2), rng=0))
    with pytest.raises(ValueError):
        A.model_from_json({**d, "version": 99})
    d["params"][0]["shape"] = [3, 2]
    with pytest.raises(ValueError):
        A.model_from_json(d)
