"""Build a Bell state by hand, then let the environment tune the angles.

    python demos/bell_walkthrough.py
"""
import math

from qasforge import env as E
from qasforge import qsim

target = qsim.make_target_state("phi+")
circuit = qsim.Circuit(2, [qsim.ry(0, math.pi / 2), qsim.cnot(0, 1)])
psi = qsim.run_circuit(circuit)
print("hand-built circuit:", circuit.to_json())
print("fidelity with |Phi+>:", qsim.fidelity(psi, target))

mps = qsim.mps_decompose(qsim.make_target_state("ghz", 3), max_bond=8)
print("GHZ(3) bond dimensions:", mps.bond_dims)

# the environment picks gate templates; rotation angles are fitted after each append
environment = E.StatePrepEnv(E.EnvConfig(2, target, xi=0.01, max_steps=10))
environment.reset()
table = environment.table
for gate in (qsim.ry(0), qsim.cnot(0, 1)):
    out = environment.step(table.entries.index(gate))
    print(f"append {gate.kind} -> cost {out.cost:.2e}, reward {out.reward:+.2f}, done={out.done} ({out.done_reason})")
