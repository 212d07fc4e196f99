#!/usr/bin/env python3
"""Tune the synthetic separation for the distillation comparison.

The packaged default separation must make the no-distillation baseline
slow enough that a teacher head start shows up in rounds-to-90, while
keeping 90% reachable inside a 10-round run. For each candidate
separation this script runs the baseline (alpha 0) and the distilled
variant (alpha 0.5) across seeds, then prints medians and a verdict
against the thresholds the test suite freezes:

  * baseline median rounds-to-90 is finite and at least 6
  * distilled median rounds-to-90 <= baseline median
  * median final accuracy drops by no more than 0.5 points
  * every trained teacher clears 95% validation accuracy
  * no evaluated round dips more than 1.0 point below its predecessor

Bracket with one seed over several separations first, then confirm the
chosen value with the full seed count:

    python3 scripts/pilot_kd_convergence.py --separations 0.6 0.9 1.2 --seeds 1
    python3 scripts/pilot_kd_convergence.py --separations 0.9 --seeds 7
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import statistics
import time
from pathlib import Path

from fedkd.config import ExperimentConfig, SynthSpec
from fedkd.orchestrator import run_experiment


def run_pair(separation: float, seed: int, samples_per_class: int, rounds: int) -> dict:
    out = {"separation": separation, "seed": seed}
    for tag, alpha in (("base", 0.0), ("kd", 0.5)):
        cfg = dataclasses.replace(
            ExperimentConfig(),
            alpha=alpha,
            seed=seed,
            rounds=rounds,
            synth=SynthSpec(
                samples_per_class=samples_per_class, class_separation=separation
            ),
        ).validated()
        t0 = time.perf_counter()
        result = run_experiment(cfg)
        accs = [acc for _, acc in result.evaluations]
        out[f"{tag}_rounds_to_90"] = result.rounds_to(90.0)
        out[f"{tag}_final"] = accs[-1]
        out[f"{tag}_history"] = result.evaluations
        out[f"{tag}_max_dip"] = max(
            [a - b for a, b in zip(accs, accs[1:])] or [0.0]
        )
        out[f"{tag}_wall"] = round(time.perf_counter() - t0, 1)
        if tag == "kd":
            out["teacher_val"] = result.teacher["val_accuracy_percent"]
    return out


def _median(values) -> float:
    return statistics.median(math.inf if v is None else v for v in values)


def summarize(separation: float, rows: list[dict]) -> dict:
    base_med = _median(r["base_rounds_to_90"] for r in rows)
    kd_med = _median(r["kd_rounds_to_90"] for r in rows)
    base_final = statistics.median(r["base_final"] for r in rows)
    kd_final = statistics.median(r["kd_final"] for r in rows)
    teacher_min = min(r["teacher_val"] for r in rows)
    max_dip = max(max(r["base_max_dip"], r["kd_max_dip"]) for r in rows)
    checks = {
        "baseline_slow_but_reaches": 6 <= base_med < math.inf,
        "kd_not_slower": kd_med <= base_med,
        "final_within_half_point": kd_final >= base_final - 0.5,
        "teacher_above_95": teacher_min >= 95.0,
        "no_dip_over_1pt": max_dip <= 1.0,
    }
    return {
        "separation": separation,
        "base_median_rounds": base_med,
        "kd_median_rounds": kd_med,
        "base_median_final": round(base_final, 2),
        "kd_median_final": round(kd_final, 2),
        "teacher_min_val": round(teacher_min, 2),
        "max_dip": round(max_dip, 2),
        "checks": checks,
        "ok": all(checks.values()),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--separations", type=float, nargs="+", required=True)
    parser.add_argument("--seeds", type=int, default=7)
    parser.add_argument("--samples-per-class", type=int, default=2000)
    parser.add_argument("--rounds", type=int, default=10)
    parser.add_argument("--out", default="pilot_results.json")
    args = parser.parse_args()

    all_rows, summaries = [], []
    for separation in args.separations:
        rows = []
        for seed in range(args.seeds):
            row = run_pair(separation, seed, args.samples_per_class, args.rounds)
            rows.append(row)
            all_rows.append(row)
            print(
                f"sep {separation:g} seed {seed}: "
                f"base r90={row['base_rounds_to_90']} final={row['base_final']:.2f}  "
                f"kd r90={row['kd_rounds_to_90']} final={row['kd_final']:.2f}  "
                f"teacher={row['teacher_val']:.2f}  "
                f"({row['base_wall'] + row['kd_wall']:.0f}s)",
                flush=True,
            )
        summary = summarize(separation, rows)
        summaries.append(summary)
        flags = ", ".join(k for k, v in summary["checks"].items() if not v) or "all ok"
        print(
            f"== sep {separation:g}: base med {summary['base_median_rounds']} "
            f"kd med {summary['kd_median_rounds']} "
            f"finals {summary['base_median_final']}/{summary['kd_median_final']} "
            f"teacher>={summary['teacher_min_val']} dip {summary['max_dip']} "
            f"-> {flags}",
            flush=True,
        )
    Path(args.out).write_text(
        json.dumps({"rows": all_rows, "summaries": summaries}, indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
