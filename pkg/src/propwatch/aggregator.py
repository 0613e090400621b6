"""Correlates parent and child log entries along resolved edges.

Each child entry on an edge is paired with the latest qualifying parent
entry at or before its own timestamp; the timestamp difference is that
change's propagation delta. Deltas aggregate into fixed-width histograms
and per-parent completion reports, both exportable as CSV.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .deps import ObjectEdge
from .errors import MalformedEntry, OutputUnwritable, ParentEventMissing
from .model import LogEntry, Op, format_time_ns, parse_entry

MS = 1_000_000


class MatchMode(Enum):
    SAME_OP = "sameop"
    CAUSAL_LATEST = "causal"


@dataclass(frozen=True)
class PropagationRecord:
    edge: ObjectEdge
    parent_index: int
    child_index: int
    parent_op: Op
    child_op: Op
    parent_time_ns: int
    child_time_ns: int

    @property
    def delta_ns(self) -> int:
        return self.child_time_ns - self.parent_time_ns


@dataclass(frozen=True)
class Orphan:
    """A child entry with no qualifying parent entry at or before its time."""

    edge: ObjectEdge
    child_index: int
    child_op: Op
    child_time_ns: int


@dataclass
class CorrelationResult:
    records: list[PropagationRecord]
    orphans: list[Orphan]


@dataclass
class Histogram:
    """Half-open fixed-width bins: bin k covers [origin + k·w, origin + (k+1)·w)."""

    bin_width_ns: int
    origin_ns: int = 0
    counts: list[int] = field(default_factory=list)
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self) -> None:
        if self.bin_width_ns <= 0:
            raise ValueError("bin width must be > 0")

    @property
    def samples(self) -> int:
        return sum(self.counts) + self.underflow + self.overflow

    def add(self, value_ns: int) -> None:
        offset = value_ns - self.origin_ns
        if offset < 0:
            self.underflow += 1
            return
        index = offset // self.bin_width_ns
        if index >= len(self.counts):
            self.counts.extend([0] * (index + 1 - len(self.counts)))
        self.counts[index] += 1

    def __add__(self, other: "Histogram") -> "Histogram":
        if (self.bin_width_ns, self.origin_ns) != (other.bin_width_ns, other.origin_ns):
            raise ValueError("histograms have different bin geometry")
        width = max(len(self.counts), len(other.counts))
        counts = [
            (self.counts[i] if i < len(self.counts) else 0)
            + (other.counts[i] if i < len(other.counts) else 0)
            for i in range(width)
        ]
        return Histogram(
            self.bin_width_ns,
            self.origin_ns,
            counts,
            self.underflow + other.underflow,
            self.overflow + other.overflow,
        )


@dataclass(frozen=True)
class CompletionReport:
    parent_uid: str
    op: Op
    first_child_delta_ns: int
    last_child_delta_ns: int
    child_count: int
    expected_child_count: int | None = None

    @property
    def complete(self) -> bool:
        return self.expected_child_count is None or self.child_count >= self.expected_child_count


def _entries_by_uid(entries: Sequence[LogEntry]) -> dict[str, list[tuple[int, LogEntry]]]:
    index: dict[str, list[tuple[int, LogEntry]]] = {}
    for i, entry in enumerate(entries):
        index.setdefault(entry.obj.meta.uid, []).append((i, entry))
    return index


def correlate(
    entries: Sequence[LogEntry],
    edges: Sequence[ObjectEdge],
    mode: MatchMode = MatchMode.SAME_OP,
) -> CorrelationResult:
    """Pair child entries with their latest qualifying parent entry.

    entries must be time-ordered. SameOp pairs a child only with parents
    of the same op; CausalLatest with the latest parent of any op. Ties
    on time resolve to the parent with the higher resourceVersion, then
    higher log offset; a tied parent yields delta 0.
    """
    by_uid = _entries_by_uid(entries)
    records: list[PropagationRecord] = []
    orphans: list[Orphan] = []
    for edge in edges:
        parents = by_uid.get(edge.parent_uid, [])
        children = by_uid.get(edge.child_uid, [])
        if mode is MatchMode.SAME_OP:
            buckets: dict[Op, list[tuple[int, LogEntry]]] = {}
            for item in parents:
                buckets.setdefault(item[1].op, []).append(item)
            cursors = {op: [0, None] for op in buckets}  # [next index, best candidate]
            for ci, centry in children:
                bucket = buckets.get(centry.op)
                if bucket is None:
                    orphans.append(Orphan(edge, ci, centry.op, centry.time_ns))
                    continue
                cursor = cursors[centry.op]
                best = _advance(bucket, cursor, centry.time_ns)
                if best is None:
                    orphans.append(Orphan(edge, ci, centry.op, centry.time_ns))
                else:
                    records.append(_record(edge, best, ci, centry))
        else:
            cursor = [0, None]
            for ci, centry in children:
                best = _advance(parents, cursor, centry.time_ns)
                if best is None:
                    orphans.append(Orphan(edge, ci, centry.op, centry.time_ns))
                else:
                    records.append(_record(edge, best, ci, centry))
    return CorrelationResult(records, orphans)


def _advance(parents, cursor, time_ns):
    """Move the bucket cursor through parents with time <= time_ns, keeping
    the best candidate under the (time, resourceVersion, offset) order."""
    i, best = cursor
    while i < len(parents) and parents[i][1].time_ns <= time_ns:
        candidate = parents[i]
        if best is None or _rank(candidate) > _rank(best):
            best = candidate
        i += 1
    cursor[0], cursor[1] = i, best
    return best


def _rank(item: tuple[int, LogEntry]) -> tuple[int, int, int]:
    index, entry = item
    return (entry.time_ns, entry.obj.meta.resource_version, index)


def _record(edge, parent_item, child_index, child_entry) -> PropagationRecord:
    parent_index, parent_entry = parent_item
    return PropagationRecord(
        edge=edge,
        parent_index=parent_index,
        child_index=child_index,
        parent_op=parent_entry.op,
        child_op=child_entry.op,
        parent_time_ns=parent_entry.time_ns,
        child_time_ns=child_entry.time_ns,
    )


def histogram(
    records: Iterable[PropagationRecord] | Iterable[int],
    bin_width_ns: int,
    origin_ns: int = 0,
) -> Histogram:
    """Bin propagation records (or raw nanosecond deltas)."""
    hist = Histogram(bin_width_ns=bin_width_ns, origin_ns=origin_ns)
    for item in records:
        hist.add(item.delta_ns if isinstance(item, PropagationRecord) else item)
    return hist


def completion(
    entries: Sequence[LogEntry],
    edges: Sequence[ObjectEdge],
    parent_uid: str,
    op: Op,
    expected: int | None = None,
) -> CompletionReport:
    """First/last child delta for one parent event, deduplicated across rules."""
    if not any(e.obj.meta.uid == parent_uid and e.op is op for e in entries):
        raise ParentEventMissing(f"no {op.value} entry for parent uid {parent_uid}")
    relevant = [e for e in edges if e.parent_uid == parent_uid]
    result = correlate(entries, relevant, MatchMode.SAME_OP)
    deltas_by_child: dict[int, int] = {}
    for record in result.records:
        if record.parent_op is op:
            deltas_by_child[record.child_index] = record.delta_ns
    deltas = list(deltas_by_child.values())
    return CompletionReport(
        parent_uid=parent_uid,
        op=op,
        first_child_delta_ns=min(deltas) if deltas else 0,
        last_child_delta_ns=max(deltas) if deltas else 0,
        child_count=len(deltas),
        expected_child_count=expected,
    )


# ---------------------------------------------------------------------------
# Log loading and merging.

def read_entries(
    path: str | Path, lenient: bool = False
) -> tuple[list[LogEntry], list[tuple[int, str]]]:
    """Parse one log file; returns (entries, skipped (lineno, reason) pairs).

    Without lenient, the first malformed line raises MalformedEntry
    naming the file and 1-based line number.
    """
    entries: list[LogEntry] = []
    skipped: list[tuple[int, str]] = []
    with open(path, "rb") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                entries.append(parse_entry(line))
            except MalformedEntry as exc:
                if not lenient:
                    raise MalformedEntry(f"{path}:{lineno}: {exc}") from None
                skipped.append((lineno, str(exc)))
    return entries, skipped


def merge_entries(per_file: Sequence[Sequence[LogEntry]]) -> list[LogEntry]:
    """Time-sorted merge; ties keep file order then line order (stable sort)."""
    merged: list[LogEntry] = [e for entries in per_file for e in entries]
    merged.sort(key=lambda e: e.time_ns)
    return merged


# ---------------------------------------------------------------------------
# CSV emission. Durations are milliseconds; fractional digits cover
# microseconds and trailing zeros are trimmed in histogram bin labels.

def format_ms(value_ns: int) -> str:
    text = f"{value_ns / MS:.3f}".rstrip("0").rstrip(".")
    return text if text else "0"


def _open_out(path: str | Path):
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OutputUnwritable(f"cannot write {path}: {exc}") from None


def write_histogram_csv(hist: Histogram, path: str | Path) -> Path:
    with _open_out(path) as f:
        f.write("bin_start_ms,count\n")
        for k, count in enumerate(hist.counts):
            f.write(f"{format_ms(hist.origin_ns + k * hist.bin_width_ns)},{count}\n")
    return Path(path)


def write_records_csv(records: Sequence[PropagationRecord], path: str | Path) -> Path:
    with _open_out(path) as f:
        f.write(
            "rule_kind,parent_resource,child_resource,parent_uid,child_uid,"
            "parent_op,child_op,parent_index,child_index,parent_time,child_time,delta_ms\n"
        )
        for r in records:
            f.write(
                f"{r.edge.rule.kind.value},{r.edge.rule.parent_resource},"
                f"{r.edge.rule.child_resource},{r.edge.parent_uid},{r.edge.child_uid},"
                f"{r.parent_op.value},{r.child_op.value},{r.parent_index},{r.child_index},"
                f"{format_time_ns(r.parent_time_ns)},{format_time_ns(r.child_time_ns)},"
                f"{r.delta_ns / MS:.3f}\n"
            )
    return Path(path)


def write_orphans_csv(orphans: Sequence[Orphan], path: str | Path) -> Path:
    with _open_out(path) as f:
        f.write("rule_kind,parent_resource,child_resource,parent_uid,child_uid,child_op,child_index,child_time\n")
        for o in orphans:
            f.write(
                f"{o.edge.rule.kind.value},{o.edge.rule.parent_resource},"
                f"{o.edge.rule.child_resource},{o.edge.parent_uid},{o.edge.child_uid},"
                f"{o.child_op.value},{o.child_index},{format_time_ns(o.child_time_ns)}\n"
            )
    return Path(path)


def write_completion_csv(reports: Sequence[CompletionReport], path: str | Path) -> Path:
    with _open_out(path) as f:
        f.write(
            "parent_uid,op,child_count,expected_child_count,"
            "first_child_delta_ms,last_child_delta_ms,complete\n"
        )
        for r in reports:
            expected = "" if r.expected_child_count is None else r.expected_child_count
            f.write(
                f"{r.parent_uid},{r.op.value},{r.child_count},{expected},"
                f"{r.first_child_delta_ns / MS:.3f},{r.last_child_delta_ns / MS:.3f},"
                f"{str(r.complete).lower()}\n"
            )
    return Path(path)


def summarize_records(
    records: Sequence[PropagationRecord],
) -> list[tuple[str, Op, int, float, float, float]]:
    """Per (rule, child op) summary rows: count and min/median/max delta ms."""
    groups: dict[tuple[str, Op], list[int]] = {}
    for r in records:
        groups.setdefault((r.edge.rule.describe(), r.child_op), []).append(r.delta_ns)
    rows = []
    for (rule_desc, op), deltas in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        rows.append(
            (
                rule_desc,
                op,
                len(deltas),
                min(deltas) / MS,
                statistics.median(deltas) / MS,
                max(deltas) / MS,
            )
        )
    return rows
