#!/usr/bin/env python3
"""Run the four-scenario comparison and print plot-ready tables.

Both topologies (hierarchical and centralised) are run with and without
distillation on one shared synthetic dataset, then two tables come out:
the accuracy trajectory of every scenario per evaluated round, and the
communication totals that separate the topologies. `--trace-csv` saves
the trajectory table for plotting.

    python3 scripts/four_way_comparison.py --samples-per-class 500
    python3 scripts/four_way_comparison.py --seed 3 --trace-csv traces.csv
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import time

from fedkd.config import ExperimentConfig, SynthSpec
from fedkd.orchestrator import run_scenario_matrix


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rounds", type=int, default=10)
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument(
        "--samples-per-class",
        type=int,
        default=ExperimentConfig().synth.samples_per_class,
    )
    parser.add_argument("--trace-csv", default=None)
    args = parser.parse_args()

    cfg = dataclasses.replace(
        ExperimentConfig(),
        seed=args.seed,
        rounds=args.rounds,
        alpha=args.alpha,
        synth=dataclasses.replace(
            ExperimentConfig().synth, samples_per_class=args.samples_per_class
        ),
    ).validated()

    started = time.perf_counter()
    matrix = run_scenario_matrix(cfg)
    elapsed = time.perf_counter() - started

    results = matrix["results"]
    names = list(results)
    eval_rounds = [r for r, _ in next(iter(results.values())).evaluations]

    width = max(len(n) for n in names)
    print(f"accuracy by round (seed {cfg.seed}, {elapsed:.0f}s):")
    header = " ".join(f"r{r:<6}" for r in eval_rounds)
    print(f"  {'scenario':<{width}} {header}")
    for name in names:
        cells = " ".join(f"{acc:6.2f} " for _, acc in results[name].evaluations)
        print(f"  {name:<{width}} {cells}")

    print("\ncommunication totals:")
    for name in names:
        traffic = results[name].traffic
        up = traffic["cloud_upstream"]
        print(
            f"  {name:<{width}} central-server upstream {up['messages']:3d} msgs "
            f"{up['bytes']:>11,} bytes, total {traffic['bytes']:>11,} bytes"
        )

    if args.trace_csv:
        with open(args.trace_csv, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["scenario", "round", "accuracy_percent"])
            for name in names:
                for round_index, acc in results[name].evaluations:
                    writer.writerow([name, round_index, f"{acc:.4f}"])
        print(f"\nwrote {args.trace_csv}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
