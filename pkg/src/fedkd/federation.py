"""Two-level federated averaging.

Edges average the weight vectors of their member clients, the cloud
averages the edge results, and the flat (centralised) variant averages all
client vectors in one step. All three are unweighted means: every client
counts once regardless of how much data it holds. Sample counts are carried
through for diagnostics but never enter the arithmetic.

Updates are sorted by id and accumulated in float64 before casting back,
so the result is bit-identical under any arrival order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError
from .nn import WeightVector


@dataclass(frozen=True)
class ClientUpdate:
    """One client's trained weights for one round."""

    client_id: int
    round_index: int
    weights: WeightVector
    sample_count: int


@dataclass(frozen=True)
class ClusterUpdate:
    """One edge's aggregate for one round, with its member roster."""

    cluster_id: int
    round_index: int
    weights: WeightVector
    client_ids: tuple[int, ...]
    sample_count: int


def assign_clusters(num_clients: int, num_clusters: int) -> list[list[int]]:
    """Partition client ids 0..num_clients-1 into contiguous clusters.
    When the division is uneven the leading clusters take the extra client,
    so 9 clients over 4 clusters gives sizes 3, 2, 2, 2."""
    if num_clients < 1 or num_clusters < 1:
        raise ConfigError("need at least one client and one cluster")
    if num_clusters > num_clients:
        raise ConfigError(
            f"{num_clusters} clusters cannot all be non-empty with {num_clients} clients"
        )
    return [c.tolist() for c in np.array_split(np.arange(num_clients), num_clusters)]


def _mean_weights(vectors: list[WeightVector]) -> WeightVector:
    shapes = vectors[0].shapes()
    for v in vectors[1:]:
        if v.shapes() != shapes:
            raise ConfigError("weight vectors disagree on tensor shapes")
    dtype = vectors[0].dtype
    out = []
    for tensors in zip(*(v.tensors for v in vectors)):
        acc = np.zeros(tensors[0].shape, dtype=np.float64)
        for t in tensors:
            acc += t
        out.append((acc / len(vectors)).astype(dtype))
    return WeightVector(out)


def _check_batch(updates, id_attr: str, what: str) -> list:
    if not updates:
        raise ProtocolError(f"nothing to aggregate: no {what}s")
    rounds = {u.round_index for u in updates}
    if len(rounds) > 1:
        raise ProtocolError(f"{what}s span rounds {sorted(rounds)}")
    ids = [getattr(u, id_attr) for u in updates]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate {what} id in aggregation batch")
    return sorted(updates, key=lambda u: getattr(u, id_attr))


def edge_aggregate(cluster_id: int, updates: list[ClientUpdate]) -> ClusterUpdate:
    """Unweighted mean over one cluster's client updates."""
    ordered = _check_batch(updates, "client_id", "client update")
    return ClusterUpdate(
        cluster_id=cluster_id,
        round_index=ordered[0].round_index,
        weights=_mean_weights([u.weights for u in ordered]),
        client_ids=tuple(u.client_id for u in ordered),
        sample_count=sum(u.sample_count for u in ordered),
    )


def cloud_aggregate(updates: list[ClusterUpdate]) -> WeightVector:
    """Unweighted mean over the edge aggregates."""
    ordered = _check_batch(updates, "cluster_id", "cluster update")
    return _mean_weights([u.weights for u in ordered])


def flat_aggregate(updates: list[ClientUpdate]) -> WeightVector:
    """Single-step mean over all client updates (no edge tier)."""
    ordered = _check_batch(updates, "client_id", "client update")
    return _mean_weights([u.weights for u in ordered])
