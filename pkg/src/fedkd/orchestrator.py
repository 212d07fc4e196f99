"""Round-based driver for the federated distillation protocol.

One experiment:

    1. shard the training set; clients get one shard each, the remaining
       shards pool into a public set
    2. when distillation is on (alpha > 0), pre-train the large teacher on
       the public set with early stopping, then broadcast it once; clients
       score their own shards with the frozen teacher
    3. every round the cloud pushes the global student down (via the edges
       in hierarchical mode), clients run local epochs of Adam on the
       blended loss, push weights back up, and each tier averages

Simulated network time covers message transfer only. Training, aggregation
and evaluation run in zero simulated seconds; their real cost is measured
on the wall clock and reported under `wall_seconds` keys, which are the
only non-deterministic values in a result. Every message goes through the
network model and lands in the event log, so traffic claims are derived,
never assumed.

Client work is sequential here but each client draws from its own seeded
random stream, so results are independent of client iteration order.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import distill, federation, netsim, nn
from .config import ExperimentConfig, to_dict
from .data import Dataset, make_synthetic, protocol_shards, read_dataset_cache, stratified_split
from .errors import ConfigError, DataError
from .metrics import EvalReport, evaluate, rounds_to_threshold

log = logging.getLogger(__name__)

MSG_MODEL_UP = "model_up"
MSG_MODEL_DOWN = "model_down"
MSG_TEACHER_INIT = "teacher_init"

_PREDICT_CHUNK = 4096


def dataset_fingerprint(train: Dataset, test: Dataset) -> str:
    """Content hash over both splits; runs that share data share this."""
    digest = hashlib.sha256()
    for ds in (train, test):
        digest.update(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
        digest.update(np.ascontiguousarray(ds.labels, dtype="<u1").tobytes())
    return "sha256:" + digest.hexdigest()


def _predict_labels(model: nn.ModelState, features: np.ndarray) -> np.ndarray:
    parts = []
    for start in range(0, features.shape[0], _PREDICT_CHUNK):
        logits, _ = nn.forward(model, features[start : start + _PREDICT_CHUNK])
        parts.append(logits.argmax(axis=1))
    return np.concatenate(parts)


def _model_logits(model: nn.ModelState, features: np.ndarray) -> np.ndarray:
    parts = []
    for start in range(0, features.shape[0], _PREDICT_CHUNK):
        logits, _ = nn.forward(model, features[start : start + _PREDICT_CHUNK])
        parts.append(logits)
    return np.concatenate(parts)


def train_teacher(
    public: Dataset, cfg: ExperimentConfig, rng: np.random.Generator
) -> tuple[nn.ModelState, dict]:
    """Fit the large model on the public pool. Early stopping watches the
    held-out loss with the configured patience and restores the best
    weights seen."""
    arch = nn.teacher_arch(cfg.input_length)
    train_idx, val_idx = stratified_split(public.labels, cfg.teacher.val_fraction, rng)
    train, val = public.subset(train_idx), public.subset(val_idx)
    model = nn.new_model(arch, rng=rng, learning_rate=cfg.learning_rate)
    best_loss = np.inf
    best_weights = model.weights.copy()
    best_epoch = 0
    bad_epochs = 0
    epochs_run = 0
    started = time.perf_counter()
    for epoch in range(1, cfg.teacher.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train))
        for start in range(0, len(train), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = nn.forward(model, train.features[idx])
            _, grad = distill.hard_loss(logits, train.labels[idx])
            nn.adam_step(model, nn.backward(model, cache, grad))
        val_loss, _ = distill.hard_loss(_model_logits(model, val.features), val.labels)
        if val_loss < best_loss:
            best_loss = val_loss
            best_weights = model.weights.copy()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.teacher.patience:
                break
    nn.load_weights(model, best_weights)
    wall = time.perf_counter() - started
    val_report = evaluate(val.labels, _predict_labels(model, val.features))
    log.info(
        "teacher: %d epochs (best %d), val loss %.4f, val accuracy %.2f%%",
        epochs_run, best_epoch, best_loss, val_report.accuracy_percent,
    )
    info = {
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "best_val_loss": float(best_loss),
        "val_accuracy_percent": val_report.accuracy_percent,
        "param_count": nn.param_count(arch)[1],
        "blob_bytes": nn.weight_blob_bytes(nn.param_count(arch)[1]),
        "wall_seconds": wall,
    }
    return model, info


def client_local_train(
    global_weights: nn.WeightVector,
    arch: nn.ModelArch,
    shard: Dataset,
    teacher_logits: np.ndarray | None,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    local_epochs: int | None = None,
) -> tuple[nn.WeightVector, float]:
    """One client's round: fresh Adam on a copy of the global weights.
    Returns the trained weights and the mean blended loss over batches
    (NaN when no batches ran)."""
    epochs = cfg.local_epochs if local_epochs is None else local_epochs
    model = nn.ModelState(
        arch, global_weights.copy(), nn.fresh_adam(arch, cfg.learning_rate)
    )
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(len(shard))
        for start in range(0, len(shard), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = nn.forward(model, shard.features[idx])
            soft_targets = None if teacher_logits is None else teacher_logits[idx]
            loss, grad, _, _ = distill.distill_loss(
                logits, soft_targets, shard.labels[idx], cfg.alpha, cfg.temperature
            )
            nn.adam_step(model, nn.backward(model, cache, grad))
            losses.append(loss)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return model.weights, mean_loss


class FederatedExperiment:
    """Holds the wiring for one run; `run()` executes it."""

    def __init__(self, cfg: ExperimentConfig, train: Dataset, test: Dataset):
        cfg.validated()
        for name, ds in (("train", train), ("test", test)):
            if ds.features.shape[1] != cfg.input_length:
                raise ConfigError(
                    f"{name} set has {ds.features.shape[1]} features, "
                    f"config expects {cfg.input_length}"
                )
            if len(ds) and ds.labels.max() >= nn.NUM_CLASSES:
                raise DataError(f"{name} set has labels outside the 6 classes")
        self.cfg = cfg
        self.train = train
        self.test = test
        self.hierarchical = cfg.mode == "hierarchical"
        self.network = netsim.Network(cfg.network)
        self.student = nn.student_arch(cfg.input_length)
        self.student_blob = nn.weight_blob_bytes(nn.param_count(self.student)[1])
        shard_rng = np.random.default_rng([cfg.seed, 0])
        self.client_shards, self.public = protocol_shards(
            train, cfg.num_clients, cfg.num_shards, shard_rng
        )
        self.clusters = (
            federation.assign_clusters(cfg.num_clients, cfg.num_clusters)
            if self.hierarchical
            else [list(range(cfg.num_clients))]
        )
        self.edge_of = {}
        for cluster_id, members in enumerate(self.clusters):
            for client in members:
                self.edge_of[client] = cluster_id
        self.client_rngs = [
            np.random.default_rng([cfg.seed, 10 + i]) for i in range(cfg.num_clients)
        ]

    def _client_order(self) -> list[int]:
        return list(range(self.cfg.num_clients))

    # ------------------------------------------------------------- phases

    def _broadcast_teacher(self, blob_bytes: int, at: float) -> float:
        """One-off teacher push, cloud to every client; returns the time
        the last client holds the weights."""
        cfg = self.cfg
        last = at
        if self.hierarchical:
            for cluster_id, members in enumerate(self.clusters):
                edge = netsim.edge_node(cluster_id)
                hop = self.network.send(0, MSG_TEACHER_INIT, netsim.CLOUD, edge, blob_bytes, at)
                self.network.drain(edge, expected_messages=1)
                for client in members:
                    leaf = self.network.send(
                        0, MSG_TEACHER_INIT, edge, netsim.client_node(client),
                        blob_bytes, hop.delivery_time,
                    )
                    last = max(last, leaf.delivery_time)
        else:
            for client in range(cfg.num_clients):
                e = self.network.send(
                    0, MSG_TEACHER_INIT, netsim.CLOUD, netsim.client_node(client),
                    blob_bytes, at,
                )
                last = max(last, e.delivery_time)
        for client in range(cfg.num_clients):
            self.network.drain(netsim.client_node(client), expected_messages=1)
        return last

    def _downlink(self, round_index: int, at: float) -> dict[int, float]:
        """Global model to every client; returns per-client receipt time."""
        receipt: dict[int, float] = {}
        if self.hierarchical:
            for cluster_id, members in enumerate(self.clusters):
                edge = netsim.edge_node(cluster_id)
                hop = self.network.send(
                    round_index, MSG_MODEL_DOWN, netsim.CLOUD, edge, self.student_blob, at
                )
                self.network.drain(edge)
                for client in members:
                    leaf = self.network.send(
                        round_index, MSG_MODEL_DOWN, edge, netsim.client_node(client),
                        self.student_blob, hop.delivery_time,
                    )
                    receipt[client] = leaf.delivery_time
        else:
            for client in range(self.cfg.num_clients):
                e = self.network.send(
                    round_index, MSG_MODEL_DOWN, netsim.CLOUD,
                    netsim.client_node(client), self.student_blob, at,
                )
                receipt[client] = e.delivery_time
        for client in receipt:
            self.network.drain(netsim.client_node(client))
        return receipt

    def _uplink(
        self,
        round_index: int,
        updates: dict[int, federation.ClientUpdate],
        ready_at: dict[int, float],
    ) -> tuple[nn.WeightVector, float, float]:
        """Weights up the tree and the averaging; returns the new global
        weights, the completion time, and the aggregation wall cost."""
        agg_wall = 0.0
        if self.hierarchical:
            edge_updates = []
            edge_done = []
            for cluster_id, members in enumerate(self.clusters):
                edge = netsim.edge_node(cluster_id)
                deliveries = [
                    self.network.send(
                        round_index, MSG_MODEL_UP, netsim.client_node(c), edge,
                        self.student_blob, ready_at[c],
                    )
                    for c in members
                ]
                barrier = netsim.phase_completion_time(deliveries)
                started = time.perf_counter()
                merged = federation.edge_aggregate(
                    cluster_id, [updates[c] for c in members]
                )
                agg_wall += time.perf_counter() - started
                self.network.drain(edge, expected_messages=len(members))
                up = self.network.send(
                    round_index, MSG_MODEL_UP, edge, netsim.CLOUD,
                    self.student_blob, barrier,
                )
                edge_updates.append(merged)
                edge_done.append(up)
            done = netsim.phase_completion_time(edge_done)
            started = time.perf_counter()
            new_global = federation.cloud_aggregate(edge_updates)
            agg_wall += time.perf_counter() - started
            self.network.drain(netsim.CLOUD, expected_messages=len(self.clusters))
        else:
            deliveries = [
                self.network.send(
                    round_index, MSG_MODEL_UP, netsim.client_node(c), netsim.CLOUD,
                    self.student_blob, ready_at[c],
                )
                for c in range(self.cfg.num_clients)
            ]
            done = netsim.phase_completion_time(deliveries)
            started = time.perf_counter()
            new_global = federation.flat_aggregate(list(updates.values()))
            agg_wall += time.perf_counter() - started
            self.network.drain(netsim.CLOUD, expected_messages=self.cfg.num_clients)
        return new_global, done, agg_wall

    # ---------------------------------------------------------------- run

    def run(self) -> "RunResult":
        cfg = self.cfg
        total_started = time.perf_counter()
        fingerprint = dataset_fingerprint(self.train, self.test)
        log.info(
            "run: mode=%s alpha=%g clients=%d clusters=%d rounds=%d data=%s",
            cfg.mode, cfg.alpha, cfg.num_clients,
            len(self.clusters) if self.hierarchical else 1, cfg.rounds, fingerprint[:15],
        )

        teacher_info = None
        shard_logits: list[np.ndarray | None] = [None] * cfg.num_clients
        clock = 0.0
        if cfg.alpha > 0.0:
            teacher_rng = np.random.default_rng([cfg.seed, 2])
            teacher, teacher_info = train_teacher(self.public, cfg, teacher_rng)
            shard_logits = [
                _model_logits(teacher, shard.features) for shard in self.client_shards
            ]
            clock = self._broadcast_teacher(teacher_info["blob_bytes"], clock)

        init_rng = np.random.default_rng([cfg.seed, 1])
        global_weights = nn.init_weights(self.student, init_rng)

        rounds: list[dict] = []
        evaluations: list[tuple[int, float]] = []
        final_eval: EvalReport | None = None
        for round_index in range(1, cfg.rounds + 1):
            start = clock
            receipt = self._downlink(round_index, start)

            train_started = time.perf_counter()
            updates: dict[int, federation.ClientUpdate] = {}
            round_losses = []
            for client in self._client_order():
                shard = self.client_shards[client]
                weights, mean_loss = client_local_train(
                    global_weights, self.student, shard, shard_logits[client],
                    cfg, self.client_rngs[client],
                )
                updates[client] = federation.ClientUpdate(
                    client_id=client,
                    round_index=round_index,
                    weights=weights,
                    sample_count=len(shard),
                )
                round_losses.append(mean_loss)
            train_wall = time.perf_counter() - train_started

            global_weights, clock, agg_wall = self._uplink(
                round_index, updates, receipt
            )

            eval_entry = None
            eval_wall = 0.0
            if round_index % cfg.eval_every == 0 or round_index == cfg.rounds:
                eval_started = time.perf_counter()
                model = nn.ModelState(
                    self.student, global_weights.copy(),
                    nn.fresh_adam(self.student, cfg.learning_rate),
                )
                report = evaluate(
                    self.test.labels, _predict_labels(model, self.test.features)
                )
                eval_wall = time.perf_counter() - eval_started
                final_eval = report
                eval_entry = report.to_dict()
                evaluations.append((round_index, report.accuracy_percent))

            log.info(
                "round %d: mean client loss %.4f, sim %.4fs%s",
                round_index, float(np.mean(round_losses)), clock - start,
                "" if eval_entry is None
                else f", accuracy {eval_entry['accuracy_percent']:.2f}%",
            )

            rounds.append(
                {
                    "round": round_index,
                    "mean_client_loss": float(np.mean(round_losses)),
                    "sim": {
                        "start": start,
                        "downlink_complete": max(receipt.values()),
                        "complete": clock,
                        "duration": clock - start,
                    },
                    "eval": eval_entry,
                    "wall_seconds": {
                        "train": train_wall,
                        "aggregate": agg_wall,
                        "evaluate": eval_wall,
                    },
                }
            )

        assert final_eval is not None  # rounds >= 1 always evaluates the last
        return RunResult(
            config=to_dict(cfg),
            fingerprint=fingerprint,
            teacher=teacher_info,
            student={
                "param_count": nn.param_count(self.student)[1],
                "blob_bytes": self.student_blob,
            },
            rounds=rounds,
            evaluations=evaluations,
            final_eval=final_eval,
            traffic=self._traffic_summary(),
            events=list(self.network.events),
            wall_seconds={"total": time.perf_counter() - total_started},
            final_weights=global_weights,
        )

    def _traffic_summary(self) -> dict:
        everything = netsim.summarize_traffic(self.network.events)
        cloud_up = [
            e for e in self.network.events
            if e.dst == netsim.CLOUD and e.kind == MSG_MODEL_UP
        ]
        teacher_events = [
            e for e in self.network.events if e.kind == MSG_TEACHER_INIT
        ]
        nodes = sorted(
            {e.dst for e in self.network.events}
            | {e.src for e in self.network.events}
        )
        return {
            "messages": everything.message_count,
            "bytes": everything.total_bytes,
            "messages_by_kind": dict(sorted(everything.by_kind.items())),
            "bytes_by_kind": dict(sorted(everything.bytes_by_kind.items())),
            "cloud_upstream": {
                "messages": len(cloud_up),
                "bytes": sum(e.payload_bytes for e in cloud_up),
            },
            "teacher_init": {
                "messages": len(teacher_events),
                "bytes": sum(e.payload_bytes for e in teacher_events),
            },
            "peak_buffer_bytes": {
                n: self.network.peak_buffer_bytes(n) for n in nodes
            },
        }


@dataclasses.dataclass
class RunResult:
    config: dict
    fingerprint: str
    teacher: dict | None
    student: dict
    rounds: list[dict]
    evaluations: list[tuple[int, float]]
    final_eval: EvalReport
    traffic: dict
    events: list[netsim.Event]
    wall_seconds: dict
    final_weights: nn.WeightVector | None = None  # not serialized

    def rounds_to(self, threshold_percent: float) -> int | None:
        return rounds_to_threshold(self.evaluations, threshold_percent)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "data": {"fingerprint": self.fingerprint},
            "teacher": self.teacher,
            "student": self.student,
            "rounds": self.rounds,
            "evaluations": [[r, a] for r, a in self.evaluations],
            "final": self.final_eval.to_dict(),
            "traffic": self.traffic,
            "wall_seconds": self.wall_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result_path = out / "result.json"
        events_path = out / "events.csv"
        result_path.write_text(self.to_json(), encoding="utf-8")
        netsim.write_event_log(self.events, events_path)
        return result_path, events_path


def resolve_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Datasets named by the config: prepared caches when paths are given,
    otherwise a synthetic draw split by the configured test fraction."""
    if cfg.train_cache is not None:
        return read_dataset_cache(cfg.train_cache), read_dataset_cache(cfg.test_cache)
    full = make_synthetic(
        samples_per_class=cfg.synth.samples_per_class,
        num_features=cfg.input_length,
        class_separation=cfg.synth.class_separation,
        noise_scale=cfg.synth.noise_scale,
        seed=cfg.seed,
    )
    split_rng = np.random.default_rng([cfg.seed, 3])
    train_idx, test_idx = stratified_split(full.labels, cfg.test_fraction, split_rng)
    return full.subset(train_idx), full.subset(test_idx)


def run_experiment(
    cfg: ExperimentConfig, train: Dataset | None = None, test: Dataset | None = None
) -> RunResult:
    if (train is None) != (test is None):
        raise ConfigError("pass both datasets or neither")
    if train is None:
        train, test = resolve_datasets(cfg)
    return FederatedExperiment(cfg, train, test).run()


MATRIX_SCENARIOS = (
    ("centralised", 0.0),
    ("centralised", None),  # None: the configured alpha
    ("hierarchical", 0.0),
    ("hierarchical", None),
)


def run_scenario_matrix(cfg: ExperimentConfig) -> dict:
    """The four-way comparison on one shared dataset: both modes, each
    with and without distillation. Rows keep a fixed order; the shared
    data fingerprint is asserted across runs."""
    base_alpha = cfg.alpha if cfg.alpha > 0 else 0.5
    train, test = resolve_datasets(cfg)
    expected_fingerprint = dataset_fingerprint(train, test)
    rows = []
    results = {}
    for mode, alpha in MATRIX_SCENARIOS:
        scenario_alpha = base_alpha if alpha is None else alpha
        scenario_cfg = dataclasses.replace(cfg, mode=mode, alpha=scenario_alpha)
        name = f"{mode}-alpha{scenario_alpha:g}"
        result = run_experiment(scenario_cfg, train, test)
        if result.fingerprint != expected_fingerprint:
            raise DataError(
                f"scenario {name} saw different data: {result.fingerprint} "
                f"vs {expected_fingerprint}"
            )
        results[name] = result
        rows.append(
            {
                "scenario": name,
                "mode": mode,
                "alpha": scenario_alpha,
                "final_accuracy_percent": result.final_eval.accuracy_percent,
                "final_weighted_f1": result.final_eval.weighted_f1,
                "rounds_to_90": result.rounds_to(90.0),
                "cloud_upstream_messages": result.traffic["cloud_upstream"]["messages"],
                "cloud_upstream_bytes": result.traffic["cloud_upstream"]["bytes"],
                "teacher_init_bytes": result.traffic["teacher_init"]["bytes"],
                "mean_round_sim_seconds": float(
                    np.mean([r["sim"]["duration"] for r in result.rounds])
                ),
                "peak_cloud_buffer_bytes": result.traffic["peak_buffer_bytes"].get(
                    netsim.CLOUD, 0
                ),
            }
        )
    return {
        "fingerprint": expected_fingerprint,
        "rows": rows,
        "results": results,
    }
