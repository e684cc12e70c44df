"""Compare the three Iris classifiers on a reduced budget.

    python demos/iris_benchmark.py [search_budget]

A full comparison (five seeds, budget 200) is ``qasforge classify --config demos/configs/iris.json``.
"""
import json
import sys

from qasforge import classify as K

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 20
cfg = K.ClassifyConfig(seeds=[0, 1], search_budget=budget, epochs=100)
report = K.run_benchmark(cfg)
for key in ("classical_accuracy", "random_ansatz_accuracy", "discovered_ansatz_accuracy"):
    print(f"{key:28s} {report[key]:.3f}")
print("discovered circuit:", json.dumps(report["discovered_circuit"]))
