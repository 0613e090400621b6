"""Shared test utilities: object builders, randomized log generators, and
independent brute-force oracles for edge resolution and correlation.

The oracles deliberately use the naive quadratic formulation so the
indexed implementations are checked against something structurally
different.
"""

from __future__ import annotations

import random
from typing import Sequence

from propwatch.aggregator import MatchMode, Orphan, PropagationRecord
from propwatch.deps import DependencyRule, ObjectEdge, RuleKind, matches_rule
from propwatch.errors import SelectorMissing
from propwatch.model import ApiObject, LogEntry, ObjectMeta, Op, OwnerRef

RESOURCES = ("deployments", "replicasets", "pods", "services", "endpoints")
LABEL_KEYS = ("app", "tier", "zone")
LABEL_VALUES = ("web", "db", "fe", "be", "a", "b")


def make_obj(
    resource: str,
    name: str,
    uid: str,
    version: int = 1,
    namespace: str = "default",
    labels: dict | None = None,
    owners: tuple[OwnerRef, ...] = (),
    spec: dict | None = None,
    status: dict | None = None,
    creation_ns: int = 0,
) -> ApiObject:
    return ApiObject(
        resource=resource,
        meta=ObjectMeta(
            name=name,
            namespace=namespace,
            uid=uid,
            resource_version=version,
            labels=labels or {},
            owner_references=owners,
            creation_time_ns=creation_ns,
        ),
        spec=spec or {},
        status=status or {},
    )


def random_labels(rng: random.Random) -> dict[str, str]:
    return {k: rng.choice(LABEL_VALUES) for k in rng.sample(LABEL_KEYS, rng.randint(0, 3))}


def random_entries(rng: random.Random, count: int) -> list[LogEntry]:
    """Standalone valid entries (for codec round-trips), exercising unicode
    labels, nested spec values, owner references, and all three ops."""
    entries = []
    t = rng.randint(0, 10**15)
    for i in range(count):
        t += rng.choice([0, 1, 999, 50_000_000, 10**9])
        resource = rng.choice(RESOURCES)
        labels = random_labels(rng)
        if rng.random() < 0.2:
            labels["unicode-é"] = "väl"
        owners = ()
        if rng.random() < 0.5:
            owners = (OwnerRef(rng.choice(RESOURCES), f"own-{i}", f"uid-{rng.randint(0, 50)}"),)
        spec = {}
        if rng.random() < 0.7:
            spec = {
                "replicas": rng.randint(0, 9),
                "nested": {"deep": [1, "two", {"three": 3}]},
            }
        obj = make_obj(
            resource,
            name=f"obj-{i}",
            uid=f"u-{i}",
            version=rng.randint(1, 1000),
            labels=labels,
            owners=owners,
            spec=spec,
            status={"phase": "Ready"} if rng.random() < 0.4 else {},
            creation_ns=rng.randint(0, t),
        )
        op = rng.choice([Op.ADD, Op.UPDATE, Op.DELETE])
        old = None
        if op is Op.UPDATE:
            old = make_obj(
                resource,
                name=f"obj-{i}",
                uid=f"u-{i}",
                version=obj.meta.resource_version - 1 or 1,
                labels=random_labels(rng),
                creation_ns=obj.meta.creation_time_ns,
            )
        entries.append(LogEntry(time_ns=t, op=op, obj=obj, old_obj=old))
    return entries


class LogBuilder:
    """Builds an internally consistent random history: monotonically
    versioned objects with adds, label-churning updates, and deletes."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.entries: list[LogEntry] = []
        self.live: dict[str, ApiObject] = {}
        self.version = 0
        self.time_ns = 0
        self.uid_count = 0
        self.base_names = ["web", "web-app", "db", "svc", "x"]

    def _next_time(self) -> int:
        # frequent ties stress tie-break rules downstream
        self.time_ns += self.rng.choice([0, 0, 1, 1_000, 7_000_000, 60_000_000])
        return self.time_ns

    def _name(self) -> str:
        base = self.rng.choice(self.base_names)
        if self.live and self.rng.random() < 0.5:
            parent = self.rng.choice(list(self.live.values()))
            base = parent.meta.name
        if self.rng.random() < 0.75:
            return f"{base}-{self.rng.randint(0, 99):02d}"
        return base + self.rng.choice(["", "app", "x"])

    def add(self) -> None:
        self.uid_count += 1
        self.version += 1
        resource = self.rng.choice(RESOURCES)
        owners = ()
        if self.live and self.rng.random() < 0.6:
            owner = self.rng.choice(list(self.live.values()))
            owners = (OwnerRef(owner.resource, owner.meta.name, owner.meta.uid),)
        spec = {}
        if resource == "services":
            roll = self.rng.random()
            if roll < 0.6:
                spec = {"selector": random_labels(self.rng)}
            elif roll < 0.7:
                spec = {"selector": {}}
            elif roll < 0.8:
                spec = {"selector": "not-a-map"}
        obj = make_obj(
            resource,
            name=self._name(),
            uid=f"u{self.uid_count:04d}",
            version=self.version,
            labels=random_labels(self.rng),
            owners=owners,
            spec=spec,
            creation_ns=self.time_ns,
        )
        if any(o.key == obj.key for o in self.live.values()):
            return
        self.live[obj.meta.uid] = obj
        self.entries.append(LogEntry(self._next_time(), Op.ADD, obj))

    def update(self) -> None:
        if not self.live:
            return
        old = self.rng.choice(list(self.live.values()))
        self.version += 1
        labels = random_labels(self.rng) if self.rng.random() < 0.6 else dict(old.meta.labels)
        spec = dict(old.spec)
        if old.resource == "services" and self.rng.random() < 0.5:
            spec["selector"] = random_labels(self.rng)
        new = ApiObject(
            resource=old.resource,
            meta=ObjectMeta(
                name=old.meta.name,
                namespace=old.meta.namespace,
                uid=old.meta.uid,
                resource_version=self.version,
                labels=labels,
                owner_references=old.meta.owner_references,
                creation_time_ns=old.meta.creation_time_ns,
            ),
            spec=spec,
            status=old.status,
        )
        self.live[new.meta.uid] = new
        self.entries.append(LogEntry(self._next_time(), Op.UPDATE, new, old))

    def delete(self) -> None:
        if not self.live:
            return
        obj = self.rng.choice(list(self.live.values()))
        del self.live[obj.meta.uid]
        self.version += 1
        final = ApiObject(
            resource=obj.resource,
            meta=ObjectMeta(
                name=obj.meta.name,
                namespace=obj.meta.namespace,
                uid=obj.meta.uid,
                resource_version=self.version,
                labels=obj.meta.labels,
                owner_references=obj.meta.owner_references,
                creation_time_ns=obj.meta.creation_time_ns,
            ),
            spec=obj.spec,
            status=obj.status,
        )
        self.entries.append(LogEntry(self._next_time(), Op.DELETE, final))


def random_history(rng: random.Random, max_entries: int) -> list[LogEntry]:
    builder = LogBuilder(rng)
    while len(builder.entries) < max_entries:
        roll = rng.random()
        if roll < 0.5 or not builder.live:
            builder.add()
        elif roll < 0.85:
            builder.update()
        else:
            builder.delete()
    return builder.entries[:max_entries]


def oracle_rules() -> list[DependencyRule]:
    return [
        DependencyRule(RuleKind.OWNER, "deployments", "replicasets"),
        DependencyRule(RuleKind.OWNER, "replicasets", "pods"),
        DependencyRule(RuleKind.NAME_PREFIX, "deployments", "replicasets"),
        DependencyRule(RuleKind.NAME_PREFIX, "replicasets", "pods"),
        DependencyRule(RuleKind.LABEL, "services", "pods"),
        DependencyRule(RuleKind.LABEL, "services", "endpoints"),
    ]


def brute_force_edges(
    entries: Sequence[LogEntry], rules: Sequence[DependencyRule]
) -> set[ObjectEdge]:
    """Quadratic oracle: try every rule on every snapshot pair of every
    ordered object pair."""
    snaps: dict[str, list[ApiObject]] = {}
    for entry in entries:
        for snap in (entry.obj, entry.old_obj):
            if snap is not None:
                snaps.setdefault(snap.meta.uid, []).append(snap)
    edges: set[ObjectEdge] = set()
    uids = list(snaps)
    for rule in rules:
        for parent_uid in uids:
            for child_uid in uids:
                if parent_uid == child_uid:
                    continue
                matched = False
                for parent_snap in snaps[parent_uid]:
                    for child_snap in snaps[child_uid]:
                        try:
                            if matches_rule(rule, parent_snap, child_snap):
                                matched = True
                                break
                        except SelectorMissing:
                            continue
                    if matched:
                        break
                if matched:
                    edges.add(ObjectEdge(parent_uid, child_uid, rule))
    return edges


def brute_force_correlate(
    entries: Sequence[LogEntry],
    edges: Sequence[ObjectEdge],
    mode: MatchMode = MatchMode.SAME_OP,
) -> tuple[set[PropagationRecord], set[Orphan]]:
    """Quadratic oracle: full scan for the latest qualifying parent entry."""
    records: set[PropagationRecord] = set()
    orphans: set[Orphan] = set()
    for edge in edges:
        for ci, child in enumerate(entries):
            if child.obj.meta.uid != edge.child_uid:
                continue
            best = None
            for pi, parent in enumerate(entries):
                if parent.obj.meta.uid != edge.parent_uid:
                    continue
                if parent.time_ns > child.time_ns:
                    continue
                if mode is MatchMode.SAME_OP and parent.op is not child.op:
                    continue
                key = (parent.time_ns, parent.obj.meta.resource_version, pi)
                if best is None or key > best[0]:
                    best = (key, pi, parent)
            if best is None:
                orphans.add(Orphan(edge, ci, child.op, child.time_ns))
            else:
                _, pi, parent = best
                records.add(
                    PropagationRecord(
                        edge=edge,
                        parent_index=pi,
                        child_index=ci,
                        parent_op=parent.op,
                        child_op=child.op,
                        parent_time_ns=parent.time_ns,
                        child_time_ns=child.time_ns,
                    )
                )
    return records, orphans


def token_bucket_offsets_ns(rate: float, burst: int, n: int) -> list[int]:
    """Closed-form creation offsets for a token bucket starting full."""
    offsets = []
    for k in range(n):
        if k < burst:
            offsets.append(0)
        else:
            offsets.append(round((k - burst + 1) / rate * 1e9))
    return offsets


def slow_start_batches(initial: int, max_batch: int, n: int) -> list[int]:
    """Per-period op counts for a doubling batcher handling n ops."""
    remaining, batch, counts = n, initial, []
    while remaining > 0:
        take = min(batch, max_batch, remaining)
        counts.append(take)
        remaining -= take
        batch = min(batch * 2, max_batch)
    return counts
