"""Data handling: CSV ingestion, preprocessing, sharding, binary caches,
and a synthetic generator for controlled experiments.

The preprocessing contract, applied in this order:

    1. drop rows with missing or non-finite cells
    2. drop identity-revealing columns (addresses, ports, payloads,
       timestamps) by name policy
    3. standardise numeric columns with train-set mean and std
    4. ordinal-encode categorical columns by sorted category name
    5. min-max scale everything to [0, 1] with train-set bounds
    6. keep the first `input_length` remaining columns in schema order,
       zero-padding when fewer survive

Statistics always come from training rows only; evaluation rows are
transformed with the frozen stats and clamped back into [0, 1]. A column
with no variance stays in the schema as a constant 0.5 and is reported as
a warning rather than silently dropped, so feature positions never shift
between runs.

The row labels are the 6 traffic families; raw attack type strings from
the Edge-IIoTset telemetry dumps are folded onto them in `map_attack_type`.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, FormatError

log = logging.getLogger(__name__)

DATA_MAGIC = b"FKDD"
DATA_FORMAT_VERSION = 1
DATA_HEADER_BYTES = 16

NUM_CLASSES = 6
CLASS_NAMES = ("Normal", "DDoS", "MITM", "Injection", "Malware", "Information Gathering")

DEFAULT_INPUT_LENGTH = 30

# published size of the full Edge-IIoTset ML corpus; used only to sanity-
# check an optional full-data run
EDGE_IIOT_EXPECTED_RECORDS = 2_219_201
EDGE_IIOT_EXPECTED_FEATURE_COLUMNS = 63

_FAMILY_BY_PREFIX = {
    "DDoS": 1,
    "MITM": 2,
}
_FAMILY_BY_NAME = {
    "Normal": 0,
    "SQL_injection": 3,
    "XSS": 3,
    "Uploading": 3,
    "Backdoor": 4,
    "Password": 4,
    "Ransomware": 4,
    "Port_Scanning": 5,
    "Vulnerability_scanner": 5,
    "Fingerprinting": 5,
}


def map_attack_type(raw: str) -> int:
    """Fold a raw attack type string onto its 6-family class index."""
    name = str(raw).strip()
    if name in _FAMILY_BY_NAME:
        return _FAMILY_BY_NAME[name]
    for prefix, family in _FAMILY_BY_PREFIX.items():
        if name.startswith(prefix):
            return family
    raise DataError(f"unknown attack type {raw!r}")


@dataclass(frozen=True)
class FeaturePolicy:
    """Which columns never become features. `label_column` carries the raw
    attack type; `drop_exact` and `drop_substrings` remove identity fields
    that would let a model shortcut on who sent the traffic."""

    label_column: str = "Attack_type"
    drop_exact: tuple[str, ...] = ("Attack_label",)
    drop_substrings: tuple[str, ...] = (
        "srcport", "dstport", "udp.port", "src_host", "dst_host",
        "proto_ipv4", "payload", "file_data", "full_uri", "uri.query",
        "time", "options", "trans_id",
    )

    def is_feature(self, column: str) -> bool:
        if column == self.label_column or column in self.drop_exact:
            return False
        lowered = column.lower()
        return not any(s in lowered for s in self.drop_substrings)


@dataclass(frozen=True)
class Dataset:
    """Preprocessed rows: float32 features in [0, 1], int64 class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ConfigError("features must be [rows, cols], labels [rows]")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigError("feature and label row counts differ")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])

    def class_counts(self, num_classes: int = NUM_CLASSES) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


# ------------------------------------------------------------- ingestion

def drop_bad_rows(frame: pd.DataFrame) -> tuple[pd.DataFrame, int]:
    """Remove rows with NaN, infinite numbers, or blank strings."""
    bad = pd.Series(False, index=frame.index)
    for column in frame.columns:
        col = frame[column]
        bad |= col.isna()
        if pd.api.types.is_numeric_dtype(col):
            bad |= ~np.isfinite(col.to_numpy(dtype=np.float64, na_value=np.nan))
        else:
            bad |= col.astype(str).str.strip().eq("")
    kept = frame.loc[~bad].reset_index(drop=True)
    return kept, int(bad.sum())


def ingest_csv(
    path: str | Path,
    policy: FeaturePolicy | None = None,
    max_bad_fraction: float = 0.01,
) -> tuple[pd.DataFrame, np.ndarray]:
    """Read a labelled CSV and return (feature frame, class labels). Rows
    the parser cannot read and rows failing `drop_bad_rows` are discarded;
    more than `max_bad_fraction` of them is an error, fewer is a logged
    warning."""
    policy = policy or FeaturePolicy()
    skipped = 0

    def count_bad_line(line: list[str]) -> None:
        nonlocal skipped
        skipped += 1

    try:
        frame = pd.read_csv(path, engine="python", on_bad_lines=count_bad_line)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    if policy.label_column not in frame.columns:
        raise DataError(f"{path} has no {policy.label_column!r} column")
    frame, dropped = drop_bad_rows(frame)
    total = len(frame) + dropped + skipped
    bad = dropped + skipped
    if total == 0 or len(frame) == 0:
        raise DataError(f"{path} contains no usable rows")
    if bad / total > max_bad_fraction:
        raise DataError(
            f"{path}: {bad} of {total} rows unusable, above the "
            f"{max_bad_fraction:.0%} ingestion limit"
        )
    if bad:
        log.warning("%s: discarded %d of %d rows during ingestion", path, bad, total)
    labels = np.array([map_attack_type(v) for v in frame[policy.label_column]])
    features = frame[[c for c in frame.columns if policy.is_feature(c)]]
    return features, labels


# --------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class ColumnStats:
    """Frozen transform parameters for one surviving column."""

    name: str
    kind: str  # "numeric" | "categorical"
    mean: float = 0.0
    std: float = 1.0
    categories: tuple[str, ...] = ()
    low: float = 0.0
    high: float = 1.0

    @property
    def constant(self) -> bool:
        return self.high == self.low


@dataclass(frozen=True)
class Preprocessor:
    columns: tuple[ColumnStats, ...]
    input_length: int
    warnings: tuple[str, ...]


def fit_preprocessor(
    frame: pd.DataFrame, input_length: int = DEFAULT_INPUT_LENGTH
) -> Preprocessor:
    """Learn per-column transform parameters from training rows."""
    if len(frame) == 0:
        raise DataError("cannot fit a preprocessor on zero rows")
    if input_length < 1:
        raise ConfigError("input_length must be at least 1")
    stats: list[ColumnStats] = []
    warnings: list[str] = []
    for name in frame.columns:
        col = frame[name]
        if pd.api.types.is_numeric_dtype(col):
            values = col.to_numpy(dtype=np.float64)
            mean = float(values.mean())
            std = float(values.std())
            if std == 0.0:
                stats.append(
                    ColumnStats(
                        name=name, kind="numeric", mean=mean, std=1.0, low=0.0, high=0.0
                    )
                )
                warnings.append(f"column {name!r} has no variance; pinned to 0.5")
                continue
            z = (values - mean) / std
            stats.append(
                ColumnStats(
                    name=name, kind="numeric", mean=mean, std=std,
                    low=float(z.min()), high=float(z.max()),
                )
            )
        else:
            categories = tuple(sorted(set(str(v) for v in col)))
            if len(categories) == 1:
                stats.append(
                    ColumnStats(
                        name=name, kind="categorical", categories=categories,
                        low=0.0, high=0.0,
                    )
                )
                warnings.append(f"column {name!r} has no variance; pinned to 0.5")
                continue
            stats.append(
                ColumnStats(
                    name=name, kind="categorical", categories=categories,
                    low=0.0, high=float(len(categories) - 1),
                )
            )
    if len(stats) < input_length:
        warnings.append(
            f"only {len(stats)} feature columns for input length {input_length}; "
            "zero-padding the rest"
        )
    for message in warnings:
        log.warning("%s", message)
    return Preprocessor(
        columns=tuple(stats), input_length=input_length, warnings=tuple(warnings)
    )


def apply_preprocessor(prep: Preprocessor, frame: pd.DataFrame) -> np.ndarray:
    """Transform rows with frozen stats; output is float32 [rows,
    input_length] clamped to [0, 1]."""
    names = [c.name for c in prep.columns]
    missing = [n for n in names if n not in frame.columns]
    if missing:
        raise DataError(f"rows are missing fitted columns {missing}")
    n = len(frame)
    out = np.zeros((n, prep.input_length), dtype=np.float32)
    for slot, stat in enumerate(prep.columns[: prep.input_length]):
        col = frame[stat.name]
        if stat.constant:
            out[:, slot] = 0.5
            continue
        if stat.kind == "numeric":
            values = col.to_numpy(dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise DataError(f"non-finite value in column {stat.name!r}")
            z = (values - stat.mean) / stat.std
        else:
            index = {c: i for i, c in enumerate(stat.categories)}
            try:
                z = np.array([index[str(v)] for v in col], dtype=np.float64)
            except KeyError as exc:
                raise DataError(
                    f"column {stat.name!r} has category {exc.args[0]!r} "
                    "not seen during fitting"
                ) from exc
        scaled = (z - stat.low) / (stat.high - stat.low)
        out[:, slot] = np.clip(scaled, 0.0, 1.0)
    return out


def stratified_split(
    labels: np.ndarray, test_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; returns sorted (train, test) row indices."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must be in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    train_parts, test_parts = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = rng.permutation(members)
        cut = int(round(test_fraction * members.size))
        test_parts.append(members[:cut])
        train_parts.append(members[cut:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    if train.size == 0 or test.size == 0:
        raise DataError("split produced an empty train or test set")
    return train, test


# --------------------------------------------------------------- sharding

def shard_sizes(num_rows: int, num_shards: int) -> list[int]:
    """Row counts per shard: as even as possible, leading shards take the
    remainder (13 rows over 12 shards gives 2,1,1,...)."""
    if num_shards < 1:
        raise ConfigError("need at least one shard")
    if num_rows < num_shards:
        raise DataError(f"{num_rows} rows cannot fill {num_shards} shards")
    base, extra = divmod(num_rows, num_shards)
    return [base + 1 if i < extra else base for i in range(num_shards)]


def make_shards(
    dataset: Dataset, num_shards: int, rng: np.random.Generator
) -> list[Dataset]:
    """Shuffle rows once, then cut into contiguous shards."""
    order = rng.permutation(len(dataset))
    shuffled = dataset.subset(order)
    shards = []
    start = 0
    for size in shard_sizes(len(dataset), num_shards):
        shards.append(shuffled.subset(np.arange(start, start + size)))
        start += size
    return shards


def protocol_shards(
    dataset: Dataset, num_clients: int, num_shards: int, rng: np.random.Generator
) -> tuple[list[Dataset], Dataset]:
    """First `num_clients` shards belong to the clients; the remainder are
    pooled as the public set the teacher trains on."""
    if num_shards <= num_clients:
        raise ConfigError(
            f"{num_shards} shards leave no public data for {num_clients} clients"
        )
    shards = make_shards(dataset, num_shards, rng)
    client_shards = shards[:num_clients]
    rest = shards[num_clients:]
    public = Dataset(
        np.concatenate([s.features for s in rest]),
        np.concatenate([s.labels for s in rest]),
    )
    return client_shards, public


# ------------------------------------------------------------ binary cache

def write_dataset_cache(path: str | Path, dataset: Dataset) -> None:
    """Header (magic, version, rows, cols as little-endian u32) then
    float32 features row-major, then one u8 label per row."""
    rows, cols = dataset.features.shape
    header = DATA_MAGIC + struct.pack("<III", DATA_FORMAT_VERSION, rows, cols)
    features = np.ascontiguousarray(dataset.features, dtype="<f4")
    labels = np.ascontiguousarray(dataset.labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(features.tobytes())
        fh.write(labels.tobytes())


def read_dataset_cache(path: str | Path) -> Dataset:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(blob) < DATA_HEADER_BYTES:
        raise FormatError(f"{path}: shorter than the 16-byte header")
    if blob[:4] != DATA_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, rows, cols = struct.unpack("<III", blob[4:16])
    if version != DATA_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = DATA_HEADER_BYTES + 4 * rows * cols + rows
    if len(blob) != expected:
        raise FormatError(
            f"{path}: {len(blob)} bytes, expected {expected} for {rows}x{cols}"
        )
    features = (
        np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=DATA_HEADER_BYTES)
        .reshape(rows, cols)
        .astype(np.float32)
    )
    labels = np.frombuffer(
        blob, dtype=np.uint8, count=rows, offset=DATA_HEADER_BYTES + 4 * rows * cols
    ).astype(np.int64)
    if not np.all(np.isfinite(features)):
        raise FormatError(f"{path}: non-finite feature value")
    if rows and labels.max() >= NUM_CLASSES:
        raise FormatError(f"{path}: label {labels.max()} outside [0, {NUM_CLASSES})")
    return Dataset(features, labels)


# -------------------------------------------------------------- synthetic

def make_synthetic(
    samples_per_class: int = 2000,
    num_features: int = DEFAULT_INPUT_LENGTH,
    class_separation: float = 1.0,
    noise_scale: float = 0.15,
    seed: int = 0,
) -> Dataset:
    """Gaussian class blobs rescaled into [0, 1]^d. Each class centre is
    a random unit direction scaled by `class_separation`; noise has fixed
    scale, so the separation-to-noise ratio is the difficulty knob.
    Features are min-max rescaled per column, and rows come out shuffled
    so contiguous shards stay class-mixed."""
    if samples_per_class < 1 or num_features < 1:
        raise ConfigError("need at least one sample and one feature")
    if class_separation < 0 or noise_scale < 0:
        raise ConfigError("separation and noise must be non-negative")
    rng = np.random.default_rng(seed)
    directions = rng.normal(0.0, 1.0, (NUM_CLASSES, num_features))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = 0.5 + class_separation * directions
    labels = np.repeat(np.arange(NUM_CLASSES), samples_per_class)
    noise = rng.normal(0.0, noise_scale, (labels.size, num_features))
    raw = centers[labels] + noise
    low = raw.min(axis=0)
    span = raw.max(axis=0) - low
    flat = span == 0.0  # a column with no spread carries no signal
    span[flat] = 1.0
    features = ((raw - low) / span).astype(np.float32)
    features[:, flat] = 0.5
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order].astype(np.int64))


# ------------------------------------------------------------ preparation

@dataclass(frozen=True)
class PreparedData:
    train_path: Path
    test_path: Path
    train_rows: int
    test_rows: int
    warnings: tuple[str, ...]


def _stratified_cap(labels: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices for a class-proportional cap at `target` rows.

    Quotas are floor(target * share) per class with the leftover going to
    the largest fractional remainders, so the kept class mix tracks the
    original as closely as integer counts allow."""
    classes, counts = np.unique(labels, return_counts=True)
    exact = target * counts / labels.size
    quotas = np.floor(exact).astype(np.int64)
    remainders = exact - quotas
    for idx in np.argsort(-remainders)[: target - int(quotas.sum())]:
        quotas[idx] += 1
    keep = []
    for cls, quota in zip(classes, quotas):
        members = np.flatnonzero(labels == cls)
        keep.append(rng.choice(members, size=int(quota), replace=False))
    return np.sort(np.concatenate(keep))


def prepare_from_csv(
    csv_path: str | Path,
    out_dir: str | Path,
    policy: FeaturePolicy | None = None,
    input_length: int = DEFAULT_INPUT_LENGTH,
    test_fraction: float = 0.2,
    seed: int = 0,
    subsample: int | None = None,
) -> PreparedData:
    """Full pipeline from a labelled CSV to a pair of cache files named
    <stem>.train.fkdd and <stem>.test.fkdd in `out_dir`."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame, labels = ingest_csv(csv_path, policy)
    rng = np.random.default_rng(seed)
    if subsample is not None:
        if subsample < 2:
            raise ConfigError("subsample must keep at least 2 rows")
        if subsample < len(frame):
            keep = _stratified_cap(labels, subsample, rng)
            frame = frame.iloc[keep].reset_index(drop=True)
            labels = labels[keep]
    train_idx, test_idx = stratified_split(labels, test_fraction, rng)
    prep = fit_preprocessor(frame.iloc[train_idx], input_length)
    train = Dataset(apply_preprocessor(prep, frame.iloc[train_idx]), labels[train_idx])
    test = Dataset(apply_preprocessor(prep, frame.iloc[test_idx]), labels[test_idx])
    train_path = out_dir / f"{csv_path.stem}.train.fkdd"
    test_path = out_dir / f"{csv_path.stem}.test.fkdd"
    write_dataset_cache(train_path, train)
    write_dataset_cache(test_path, test)
    return PreparedData(
        train_path=train_path,
        test_path=test_path,
        train_rows=len(train),
        test_rows=len(test),
        warnings=prep.warnings,
    )
