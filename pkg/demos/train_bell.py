"""Train PERDDQN on the Bell task next to a frozen random-search baseline and plot both.

    python demos/train_bell.py [episodes] [out_dir]

The default of 2000 episodes takes a few minutes on one core.
"""
import sys
from pathlib import Path

from qasforge import harness

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
out = Path(sys.argv[2] if len(sys.argv) > 2 else "runs/demo")


def report(ep, rec):
    if ep % 500 == 0:
        print(f"  episode {ep}: steps={rec.steps} cost={rec.final_cost:.3g} eps={rec.epsilon_at_end:.3f}")


runs = {
    "ddqn": {},
    # lr 0 and epsilon fixed at 1: uniform random gate sequences, angles still tuned
    "random": {"agent": {"lr": 0.0}, "exploration": {"epsilon_start": 1.0, "epsilon_min": 1.0}},
}
csvs = []
for name, extra in runs.items():
    cfg = harness.config_from_dict({"episodes": episodes, "output_dir": str(out / name), **extra})
    print(f"{name}: {cfg.label}, {episodes} episodes")
    s = harness.run_experiment(cfg, progress=report).summary
    print(f"  r_success={s.r_success:.3f} r_optimal={s.r_optimal:.3f} "
          f"windowed success={s.final_success_probability:.3f} ({s.wall_clock_seconds:.0f}s)")
    csvs.append(out / name / "episodes.csv")

for path in harness.render_plots(csvs, out / "plots").values():
    print("wrote", path)
