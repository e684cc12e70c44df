"""Reinforcement-learning search for quantum circuits.

Submodules: ``qsim`` (statevector and MPS simulation), ``env`` (the
gate-by-gate state-preparation environment), ``approx`` (MLP and VQC
function approximators), ``replay`` (prioritized replay), ``agents``
(DDQN, TD3, A2C, PPO), ``curriculum``, ``harness`` (training runs, logs,
plots) and ``classify`` (the Iris benchmark).
"""
__version__ = "0.1.0"
