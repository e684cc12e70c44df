"""Command line entry point: ``run``, ``plot`` and ``classify``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
``run`` accepts several ``--config`` files; up to QASFORGE_THREADS of them
run concurrently, each in its own output directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import classify, harness

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("qasforge")


def thread_cap() -> int:
    raw = os.environ.get("QASFORGE_THREADS", "")
    try:
        return max(1, int(raw)) if raw else max(1, os.cpu_count() or 1)
    except ValueError:
        raise harness.ConfigError(f"QASFORGE_THREADS: expected an integer, got {raw!r}") from None


def _prepare_runs(args):
    configs = []
    for i, path in enumerate(args.config):
        cfg = harness.load_config(path)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out if len(args.config) == 1 else str(Path(args.out) / f"run{i}")
        configs.append(cfg)
    dirs = [str(Path(c.output_dir).resolve()) for c in configs]
    if len(set(dirs)) != len(dirs):
        raise harness.ConfigError("output_dir: concurrent runs need distinct output directories")
    return configs


def _run_one(cfg):
    def progress(ep, rec):
        if ep % 1000 == 0 or ep == cfg.episodes:
            log.info("%s seed %d: episode %d/%d", cfg.label, cfg.seed, ep, cfg.episodes)
    return harness.run_experiment(cfg, progress=progress)


def cmd_run(args) -> int:
    configs = _prepare_runs(args)
    workers = min(thread_cap(), len(configs))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_one, configs))
    for cfg, res in zip(configs, results):
        s = res.summary
        print(f"{cfg.label} seed={cfg.seed} r_success={s.r_success} r_optimal={s.r_optimal} "
              f"final_success_probability={s.final_success_probability} -> {cfg.output_dir}")
    return EXIT_OK


def cmd_plot(args) -> int:
    paths = harness.render_plots(args.csv, args.out, window=args.window)
    for p in paths.values():
        print(p)
    return EXIT_OK


def load_classify_config(path) -> classify.ClassifyConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise harness.ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise harness.ConfigError(f"{path}: parse error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise harness.ConfigError("config: expected a JSON object")
    cfg = harness.build_section(classify.ClassifyConfig, data, "")
    if cfg.data is not None and not Path(cfg.data).is_absolute():
        cfg.data = str(path.parent / cfg.data)
    if not Path(cfg.output).is_absolute():
        cfg.output = str(path.parent / cfg.output)
    return cfg


def cmd_classify(args) -> int:
    cfg = load_classify_config(args.config)

    def progress(row):
        log.info("seed %d: classical %.3f random %.3f discovered %.3f", row["seed"],
                 row["classical_accuracy"], row["random_ansatz_accuracy"],
                 row["discovered_ansatz_accuracy"])

    report = classify.run_benchmark(cfg, progress=progress)
    report["config"] = dataclasses.asdict(cfg)
    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    harness.atomic_write(out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"classical={report['classical_accuracy']:.4f} "
          f"random_ansatz={report['random_ansatz_accuracy']:.4f} "
          f"discovered_ansatz={report['discovered_ansatz_accuracy']:.4f} -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qasforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train an agent from a JSON experiment config")
    r.add_argument("--config", required=True, action="append", help="config path (repeatable)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="override the output directory")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="render SVG charts from episode CSV logs")
    pl.add_argument("--out", required=True, help="directory for the SVG files")
    pl.add_argument("--window", type=int, default=100, help="success-probability window")
    pl.add_argument("csv", nargs="+", help="episodes.csv files")
    pl.set_defaults(func=cmd_plot)

    c = sub.add_parser("classify", help="run the Iris benchmark")
    c.add_argument("--config", required=True, help="classify config path")
    c.set_defaults(func=cmd_classify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
