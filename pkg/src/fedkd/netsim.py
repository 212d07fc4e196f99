"""Deterministic network model for the federation rounds.

Links are lossless point-to-point pipes with a fixed propagation latency
and a fixed bandwidth, one pipe per endpoint pair, so concurrent messages
never contend:

    delivery_time = send_time + latency + payload_bytes / bandwidth

Simulated time covers communication only; local training and aggregation
occupy zero simulated seconds (their wall-clock cost is reported
separately). Every send is recorded as an event, and the event log is the
source of truth for all traffic accounting: message counts, byte totals,
and peak receive-buffer depth per node.

Node names follow "client:<i>", "edge:<j>", "cloud"; the endpoint kinds
select which link class applies.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AccountingError, ConfigError

EVENT_LOG_COLUMNS = [
    "round", "msg_id", "kind", "src", "dst", "bytes", "send_time", "delivery_time",
]

CLOUD = "cloud"


def client_node(index: int) -> str:
    return f"client:{index}"


def edge_node(index: int) -> str:
    return f"edge:{index}"


def node_kind(name: str) -> str:
    kind = name.split(":", 1)[0]
    if kind not in ("client", "edge", "cloud"):
        raise ConfigError(f"unknown node name {name!r}")
    return kind


@dataclass(frozen=True)
class LinkSpec:
    latency_s: float
    bandwidth_bytes_per_s: float

    def __post_init__(self):
        if self.latency_s < 0:
            raise ConfigError(f"negative latency {self.latency_s}")
        if self.bandwidth_bytes_per_s <= 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth_bytes_per_s}")


def transmit_seconds(payload_bytes: int, link: LinkSpec) -> float:
    """One-message transfer time: latency plus serialisation."""
    if payload_bytes < 0:
        raise ConfigError(f"negative payload {payload_bytes}")
    return link.latency_s + payload_bytes / link.bandwidth_bytes_per_s


@dataclass(frozen=True)
class NetworkConfig:
    """Per-class link parameters. Defaults: 5 ms to the nearby edge, 20 ms
    for anything that crosses to the cloud, 10 MB/s everywhere."""

    client_edge: LinkSpec = LinkSpec(0.005, 10_000_000)
    edge_cloud: LinkSpec = LinkSpec(0.020, 10_000_000)
    client_cloud: LinkSpec = LinkSpec(0.020, 10_000_000)

    def link_for(self, src: str, dst: str) -> LinkSpec:
        kinds = frozenset((node_kind(src), node_kind(dst)))
        if kinds == frozenset(("client", "edge")):
            return self.client_edge
        if kinds == frozenset(("edge", "cloud")):
            return self.edge_cloud
        if kinds == frozenset(("client", "cloud")):
            return self.client_cloud
        raise ConfigError(f"no link class between {src!r} and {dst!r}")


@dataclass(frozen=True)
class Event:
    round_index: int
    msg_id: int
    kind: str
    src: str
    dst: str
    payload_bytes: int
    send_time: float
    delivery_time: float


class Network:
    """Event-recording message fabric. Receive buffers grow as messages
    arrive and shrink only when the owning node consumes them with `drain`
    (after an aggregation); the high-water mark per node is kept."""

    def __init__(self, config: NetworkConfig | None = None):
        self.config = config or NetworkConfig()
        self.events: list[Event] = []
        self._buffered: dict[str, int] = {}
        self._peak: dict[str, int] = {}
        self._drained_counts: dict[str, int] = {}
        self._next_msg_id = 0

    def send(
        self,
        round_index: int,
        kind: str,
        src: str,
        dst: str,
        payload_bytes: int,
        send_time: float,
    ) -> Event:
        if src == dst:
            raise ConfigError(f"message from {src!r} to itself")
        if send_time < 0:
            raise ConfigError(f"negative send time {send_time}")
        link = self.config.link_for(src, dst)
        event = Event(
            round_index=round_index,
            msg_id=self._next_msg_id,
            kind=kind,
            src=src,
            dst=dst,
            payload_bytes=payload_bytes,
            send_time=send_time,
            delivery_time=send_time + transmit_seconds(payload_bytes, link),
        )
        self._next_msg_id += 1
        self.events.append(event)
        self._buffered[dst] = self._buffered.get(dst, 0) + payload_bytes
        self._peak[dst] = max(self._peak.get(dst, 0), self._buffered[dst])
        return event

    def drain(self, node: str, expected_messages: int | None = None) -> int:
        """Consume everything buffered at `node`; returns the byte count.
        When the caller states how many messages arrived since the last
        drain, the log is checked against that."""
        arrived = sum(1 for e in self.events if e.dst == node)
        new = arrived - self._drained_counts.get(node, 0)
        if expected_messages is not None and new != expected_messages:
            raise AccountingError(
                f"{node} expected {expected_messages} messages, saw {new}"
            )
        self._drained_counts[node] = arrived
        freed = self._buffered.get(node, 0)
        self._buffered[node] = 0
        return freed

    def buffered_bytes(self, node: str) -> int:
        return self._buffered.get(node, 0)

    def peak_buffer_bytes(self, node: str) -> int:
        return self._peak.get(node, 0)

    def write_event_log(self, path: str | Path) -> None:
        write_event_log(self.events, path)


def write_event_log(events: list[Event], path: str | Path) -> None:
    """CSV with one delivered message per row, in send order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_LOG_COLUMNS)
        for e in events:
            writer.writerow([
                e.round_index, e.msg_id, e.kind, e.src, e.dst,
                e.payload_bytes, repr(e.send_time), repr(e.delivery_time),
            ])


@dataclass
class TrafficSummary:
    """Byte and message totals derived from an event log."""

    message_count: int = 0
    total_bytes: int = 0
    by_kind: dict[str, int] = field(default_factory=dict)
    bytes_by_kind: dict[str, int] = field(default_factory=dict)


def summarize_traffic(events: list[Event], dst: str | None = None) -> TrafficSummary:
    """Totals over the log, optionally restricted to one destination."""
    summary = TrafficSummary()
    for e in events:
        if dst is not None and e.dst != dst:
            continue
        if e.delivery_time < e.send_time:
            raise AccountingError(f"message {e.msg_id} delivered before it was sent")
        summary.message_count += 1
        summary.total_bytes += e.payload_bytes
        summary.by_kind[e.kind] = summary.by_kind.get(e.kind, 0) + 1
        summary.bytes_by_kind[e.kind] = (
            summary.bytes_by_kind.get(e.kind, 0) + e.payload_bytes
        )
    return summary


def phase_completion_time(events: list[Event]) -> float:
    """Latest delivery in a phase; the barrier the next phase starts from."""
    if not events:
        raise AccountingError("empty phase: no events to complete")
    return max(e.delivery_time for e in events)
