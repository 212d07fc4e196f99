"""Command-line front end.

Subcommands:
    run           one experiment from a config (plus flag overrides)
    matrix        the four-way mode x distillation comparison
    prepare-data  labelled CSV -> preprocessed train/test caches
    synth         synthetic dataset -> the same cache format

Exit codes: 0 success, 2 configuration problem, 3 data problem, 4 any
other simulator error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import SynthSpec, load_config, with_overrides
from .data import make_synthetic, prepare_from_csv, stratified_split, write_dataset_cache
from .errors import ConfigError, DataError, FedKDError
from .orchestrator import run_experiment, run_scenario_matrix

import numpy as np

log = logging.getLogger(__name__)

MATRIX_CSV_COLUMNS = [
    "scenario", "mode", "alpha", "final_accuracy_percent", "final_weighted_f1",
    "rounds_to_90", "cloud_upstream_messages", "cloud_upstream_bytes",
    "teacher_init_bytes", "mean_round_sim_seconds", "peak_cloud_buffer_bytes",
]


def _load_with_overrides(args) -> "ExperimentConfig":
    cfg = load_config(args.config)
    return with_overrides(
        cfg, seed=args.seed, rounds=args.rounds, alpha=args.alpha, mode=args.mode
    )


def render_report(result) -> str:
    """Aligned per-round table with a summary head, for humans."""
    cfg = result.config  # stored as the plain dict mirror
    up = result.traffic["cloud_upstream"]
    reached = result.rounds_to(90.0)
    lines = [
        f"mode {cfg['mode']}  alpha {cfg['alpha']:g}  clients {cfg['num_clients']}  "
        f"rounds {cfg['rounds']}  seed {cfg['seed']}",
        f"data {result.fingerprint}",
        f"final accuracy {result.final_eval.accuracy_percent:.2f}%  "
        f"weighted f1 {result.final_eval.weighted_f1:.4f}  "
        f"rounds to 90%: {reached if reached is not None else 'not reached'}",
        f"cloud upstream {up['messages']} messages / {up['bytes']} bytes  "
        f"total messages {result.traffic['messages']}",
        "",
        f"{'round':>5}  {'loss':>8}  {'sim start':>10}  {'sim dur':>8}  {'accuracy':>8}",
    ]
    for record in result.rounds:
        acc = "-" if record["eval"] is None else f"{record['eval']['accuracy_percent']:.2f}"
        lines.append(
            f"{record['round']:>5}  {record['mean_client_loss']:>8.4f}  "
            f"{record['sim']['start']:>10.4f}  {record['sim']['duration']:>8.4f}  "
            f"{acc:>8}"
        )
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    cfg = _load_with_overrides(args)
    result = run_experiment(cfg)
    result_path, events_path = result.save(args.out)
    report_path = Path(args.out) / "report.txt"
    report_path.write_text(render_report(result), encoding="utf-8")
    reached = result.rounds_to(90.0)
    print(f"mode {cfg.mode}, alpha {cfg.alpha:g}, {cfg.rounds} rounds")
    print(f"final accuracy {result.final_eval.accuracy_percent:.2f}%  "
          f"weighted f1 {result.final_eval.weighted_f1:.4f}")
    print(f"rounds to 90%: {reached if reached is not None else 'not reached'}")
    up = result.traffic["cloud_upstream"]
    print(f"cloud upstream: {up['messages']} messages, {up['bytes']} bytes")
    print(f"wrote {result_path}, {events_path}, {report_path}")
    return 0


def cmd_matrix(args) -> int:
    cfg = _load_with_overrides(args)
    matrix = run_scenario_matrix(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, result in matrix["results"].items():
        result.save(out / name)
    (out / "matrix.json").write_text(
        json.dumps(
            {"fingerprint": matrix["fingerprint"], "rows": matrix["rows"]},
            sort_keys=True, indent=2,
        ) + "\n",
        encoding="utf-8",
    )
    with open(out / "matrix.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MATRIX_CSV_COLUMNS)
        writer.writeheader()
        for row in matrix["rows"]:
            writer.writerow(row)
    header = f"{'scenario':<24}{'acc%':>8}{'w-f1':>8}{'to90':>6}{'up-bytes':>12}"
    print(header)
    for row in matrix["rows"]:
        to90 = row["rounds_to_90"] if row["rounds_to_90"] is not None else "-"
        print(
            f"{row['scenario']:<24}{row['final_accuracy_percent']:>8.2f}"
            f"{row['final_weighted_f1']:>8.4f}{to90:>6}{row['cloud_upstream_bytes']:>12}"
        )
    print(f"wrote {out / 'matrix.json'} and {out / 'matrix.csv'}")
    return 0


def _row_cap(text: str):
    if text.lower() == "none":
        return None
    return int(text)


def cmd_prepare_data(args) -> int:
    prepared = prepare_from_csv(
        args.csv,
        args.out if args.out is not None else Path(args.csv).parent,
        input_length=args.input_length,
        test_fraction=args.test_fraction,
        seed=args.seed if args.seed is not None else 0,
        subsample=args.subsample,
    )
    print(f"train: {prepared.train_rows} rows -> {prepared.train_path}")
    print(f"test:  {prepared.test_rows} rows -> {prepared.test_path}")
    for warning in prepared.warnings:
        print(f"note: {warning}")
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    full = make_synthetic(
        samples_per_class=args.samples_per_class,
        num_features=args.input_length,
        class_separation=args.separation,
        noise_scale=args.noise,
        seed=seed,
    )
    split_rng = np.random.default_rng([seed, 3])
    train_idx, test_idx = stratified_split(full.labels, args.test_fraction, split_rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "synth.train.fkdd"
    test_path = out / "synth.test.fkdd"
    write_dataset_cache(train_path, full.subset(train_idx))
    write_dataset_cache(test_path, full.subset(test_idx))
    print(f"train: {train_idx.size} rows -> {train_path}")
    print(f"test:  {test_idx.size} rows -> {test_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedkd",
        description="Simulate hierarchical federated learning with distillation "
        "for 6-class intrusion detection",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_experiment_flags(p):
        p.add_argument("--config", help="YAML config; omit for reference defaults")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--rounds", type=int, help="override the round count")
        p.add_argument("--alpha", type=float, help="override the distillation weight")
        p.add_argument(
            "--mode", choices=["hierarchical", "centralised", "centralized"],
            help="override the federation mode",
        )

    p_run = sub.add_parser("run", help="run one experiment")
    add_experiment_flags(p_run)
    p_run.add_argument("--out", default="runs/single", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_matrix = sub.add_parser("matrix", help="run the 2x2 scenario comparison")
    add_experiment_flags(p_matrix)
    p_matrix.add_argument("--out", default="runs/matrix", help="output directory")
    p_matrix.set_defaults(func=cmd_matrix)

    p_prep = sub.add_parser("prepare-data", help="preprocess a labelled CSV")
    p_prep.add_argument("csv", help="input CSV with an Attack_type column")
    p_prep.add_argument("--out", help="cache directory (default: beside the CSV)")
    p_prep.add_argument("--input-length", type=int, default=30)
    p_prep.add_argument("--test-fraction", type=float, default=0.2)
    p_prep.add_argument("--seed", type=int)
    p_prep.add_argument(
        "--subsample",
        type=_row_cap,
        default=200_000,
        metavar="N|none",
        help="stratified row cap before splitting (default 200000; "
        "'none' keeps everything)",
    )
    p_prep.set_defaults(func=cmd_prepare_data)

    synth_defaults = SynthSpec()
    p_synth = sub.add_parser("synth", help="generate a synthetic cache pair")
    p_synth.add_argument("--out", default="data", help="cache directory")
    p_synth.add_argument(
        "--samples-per-class", type=int, default=synth_defaults.samples_per_class
    )
    p_synth.add_argument(
        "--separation", type=float, default=synth_defaults.class_separation
    )
    p_synth.add_argument("--noise", type=float, default=synth_defaults.noise_scale)
    p_synth.add_argument("--input-length", type=int, default=30)
    p_synth.add_argument("--test-fraction", type=float, default=0.2)
    p_synth.add_argument("--seed", type=int)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FedKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
