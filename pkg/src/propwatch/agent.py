"""Change-logging agent: subscribes to resources and appends one log entry
per received event.

The timestamp is sampled from the clock the moment an event is received,
before serialization or any buffering, so file I/O cost never leaks into
measured propagation times. Buffering is bounded by the flush policy, so
memory stays flat no matter how many events flow through.
"""

from __future__ import annotations

import json
import os
import time as _wall
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .errors import ConfigError, OutputUnwritable
from .model import LogEntry, WatchEvent, serialize_entry


@dataclass(frozen=True)
class PerEntry:
    """Flush and sync after every entry."""


@dataclass(frozen=True)
class Batched:
    """Flush when max_entries are buffered or the oldest is max_delay old."""

    max_entries: int = 256
    max_delay_ns: int = 50_000_000

    def __post_init__(self) -> None:
        if self.max_entries < 1 or self.max_delay_ns < 0:
            raise ValueError("Batched flush needs max_entries >= 1 and max_delay >= 0")


FlushPolicy = Union[PerEntry, Batched]


@dataclass(frozen=True)
class AgentConfig:
    resources: tuple[str, ...]
    output_path: Path
    flush: FlushPolicy = Batched()
    metrics_path: Path | None = None

    def __post_init__(self) -> None:
        if not self.resources:
            raise ConfigError("agent config: resources must be non-empty")
        if len(set(self.resources)) != len(self.resources):
            raise ConfigError("agent config: resource names must be unique")


class LatencyHistogram:
    """Fixed exponential buckets (1 us doubling up to ~67 s); O(1) memory."""

    BOUNDS_NS = tuple(1_000 * 2**k for k in range(27))

    def __init__(self) -> None:
        self.counts = [0] * (len(self.BOUNDS_NS) + 1)
        self.total = 0
        self.max_ns = 0

    def record(self, duration_ns: int) -> None:
        self.total += 1
        self.max_ns = max(self.max_ns, duration_ns)
        for i, bound in enumerate(self.BOUNDS_NS):
            if duration_ns <= bound:
                self.counts[i] += 1
                return
        self.counts[-1] += 1

    def quantile_ns(self, q: float) -> int:
        """Upper bound of the bucket holding the q-quantile sample."""
        if self.total == 0:
            return 0
        rank = q * self.total
        seen = 0
        for i, count in enumerate(self.counts):
            seen += count
            if seen >= rank:
                return self.BOUNDS_NS[i] if i < len(self.BOUNDS_NS) else self.max_ns
        return self.max_ns


@dataclass
class AgentMetrics:
    events_received: int = 0
    entries_written: int = 0
    bytes_written: int = 0
    dropped_entries: int = 0
    max_in_flight: int = 0
    write_latency: LatencyHistogram = field(default_factory=LatencyHistogram)

    def summary(self) -> dict:
        return {
            "eventsReceived": self.events_received,
            "entriesWritten": self.entries_written,
            "parseableBytesWritten": self.bytes_written,
            "droppedEntries": self.dropped_entries,
            "maxInFlight": self.max_in_flight,
            "receiptToWriteP50Ms": self.write_latency.quantile_ns(0.50) / 1e6,
            "receiptToWriteP99Ms": self.write_latency.quantile_ns(0.99) / 1e6,
            "receiptToWriteMaxMs": self.write_latency.max_ns / 1e6,
        }


class Agent:
    """Receives watch events and appends them to one log file.

    `source` is anything with .clock and .subscribe(resource) — normally
    the emulated store, but any event provider with the same surface
    works (the seam a real-cluster adapter would plug into).
    """

    def __init__(self, config: AgentConfig, source):
        self.config = config
        self.source = source
        self.metrics = AgentMetrics()
        self._clock = source.clock
        self._streams = []
        self._file = None
        self._buffer: list[tuple[bytes, int]] = []  # (line, receipt wall ns)
        self._running = False

    def start(self) -> "Agent":
        """Subscribe to every configured resource and begin recording."""
        streams = []
        try:
            for name in self.config.resources:
                streams.append(self.source.subscribe(name))
            self._file = open(self.config.output_path, "ab")
        except OSError as exc:
            for stream in streams:
                stream.close()
            raise OutputUnwritable(f"cannot open {self.config.output_path}: {exc}") from None
        except Exception:
            for stream in streams:
                stream.close()
            raise
        self._streams = streams
        for stream in streams:
            stream.attach(self.on_event)
        self._running = True
        return self

    def on_event(self, event: WatchEvent) -> LogEntry:
        """Record one event; the timestamp is taken first, everything else after."""
        t_ns = self._clock.now()
        receipt_wall = _wall.perf_counter_ns()
        self.metrics.events_received += 1
        entry = LogEntry(time_ns=t_ns, op=event.op, obj=event.obj, old_obj=event.old_obj)
        self._buffer.append((serialize_entry(entry), receipt_wall))
        self.metrics.max_in_flight = max(self.metrics.max_in_flight, len(self._buffer))
        policy = self.config.flush
        if isinstance(policy, PerEntry):
            self._flush(sync=True)
        elif len(self._buffer) >= policy.max_entries or (
            not self._clock.virtual
            and receipt_wall - self._buffer[0][1] >= policy.max_delay_ns
        ):
            self._flush()
        return entry

    def _flush(self, sync: bool = False) -> None:
        if not self._buffer:
            return
        batch, self._buffer = self._buffer, []
        data = b"".join(line for line, _ in batch)
        try:
            self._file.write(data)
            self._file.flush()
        except OSError:
            self.metrics.dropped_entries += len(batch)
            return
        done_wall = _wall.perf_counter_ns()
        for line, receipt_wall in batch:
            self.metrics.entries_written += 1
            self.metrics.bytes_written += len(line)
            self.metrics.write_latency.record(done_wall - receipt_wall)
        if sync:
            try:
                os.fsync(self._file.fileno())
            except OSError:
                pass

    def stop(self) -> AgentMetrics:
        """Flush everything, close subscriptions, dump metrics to the sidecar."""
        for stream in self._streams:
            stream.close()
        self._flush()
        if self._file is not None:
            self._file.close()
            self._file = None
        self._running = False
        metrics_path = self.config.metrics_path or Path(f"{self.config.output_path}.metrics")
        try:
            with open(metrics_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(self.metrics.summary(), sort_keys=True) + "\n")
        except OSError:
            pass
        return self.metrics


def start_agent(config: AgentConfig, source) -> Agent:
    return Agent(config, source).start()
