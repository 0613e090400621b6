"""Emulated API server: versioned object store with fan-out watch streams.

All mutations are serialized through one Store; every commit bumps a
store-wide version counter and fans the event out to the subscribers of
that resource, in commit order. Together with the virtual clock this
makes whole scenarios deterministic: the same script and seed always
produce the same event sequence, timestamps included.
"""

from __future__ import annotations

import heapq
import random
import time as _time
from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Callable, Iterable

from .errors import (
    AlreadyExists,
    NotFound,
    StaleWrite,
    UnknownResource,
    WrongClockMode,
)
from .model import ApiObject, Op, WatchEvent

DEFAULT_RESOURCES = ("deployments", "replicasets", "pods", "services", "endpoints")


class Clock:
    """Time source with pending timers.

    Virtual mode: `now` only moves via advance()/fire_next(); timers fire
    in deadline order with ties broken by registration order. Real mode:
    `now` is the wall clock and timers become due as it passes them.
    """

    VIRTUAL = "virtual"
    REAL = "real"

    def __init__(self, mode: str = VIRTUAL, start_ns: int = 0):
        if mode not in (self.VIRTUAL, self.REAL):
            raise ValueError(f"unknown clock mode {mode!r}")
        self.mode = mode
        self._now_ns = start_ns
        self._timers: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self._cancelled: set[int] = set()

    @property
    def virtual(self) -> bool:
        return self.mode == self.VIRTUAL

    def now(self) -> int:
        if self.virtual:
            return self._now_ns
        return _time.time_ns()

    def schedule(self, deadline_ns: int, callback: Callable[[], None]) -> int:
        self._seq += 1
        heapq.heappush(self._timers, (deadline_ns, self._seq, callback))
        return self._seq

    def schedule_after(self, delay_ns: int, callback: Callable[[], None]) -> int:
        return self.schedule(self.now() + delay_ns, callback)

    def cancel(self, timer_id: int) -> None:
        self._cancelled.add(timer_id)

    def next_deadline(self) -> int | None:
        while self._timers and self._timers[0][1] in self._cancelled:
            _, seq, _ = heapq.heappop(self._timers)
            self._cancelled.discard(seq)
        return self._timers[0][0] if self._timers else None

    def fire_next(self) -> bool:
        """Jump to the earliest deadline and run that one timer (virtual only)."""
        if not self.virtual:
            raise WrongClockMode("fire_next requires a virtual clock")
        if self.next_deadline() is None:
            return False
        deadline, _, callback = heapq.heappop(self._timers)
        self._now_ns = max(self._now_ns, deadline)
        callback()
        return True

    def advance_to(self, target_ns: int) -> None:
        """Move a virtual clock forward to target_ns (never backwards)."""
        if not self.virtual:
            raise WrongClockMode("advance_to requires a virtual clock")
        self._now_ns = max(self._now_ns, target_ns)

    def fire_due(self) -> int:
        """Run every timer whose deadline has passed the real clock."""
        fired = 0
        while True:
            deadline = self.next_deadline()
            if deadline is None or deadline > self.now():
                return fired
            _, _, callback = heapq.heappop(self._timers)
            callback()
            fired += 1


class EventStream:
    """Per-subscriber event buffer.

    Events accumulate until taken, or are pushed straight into an
    attached consumer callback by the store's dispatch loop.
    """

    def __init__(self, resource: str):
        self.resource = resource
        self.pending: deque[WatchEvent] = deque()
        self._consumer: Callable[[WatchEvent], None] | None = None
        self.closed = False

    def attach(self, consumer: Callable[[WatchEvent], None]) -> None:
        self._consumer = consumer

    def close(self) -> None:
        self.closed = True
        self._consumer = None

    def take_all(self) -> list[WatchEvent]:
        events = list(self.pending)
        self.pending.clear()
        return events

    def _deliver(self, event: WatchEvent) -> None:
        if self.closed:
            return
        if self._consumer is not None:
            self._consumer(event)
        else:
            self.pending.append(event)


@dataclass(frozen=True)
class CommitRecord:
    op: Op
    obj: ApiObject
    old_obj: ApiObject | None
    time_ns: int


class Store:
    """The emulator: object store, clock, subscriptions, and dispatch loop.

    Events are queued at commit and delivered breadth-first by drain(), so
    a subscriber always observes its resource's events in commit order and
    a controller's reactions land after the event that caused them.
    """

    def __init__(
        self,
        clock: Clock | None = None,
        resources: Iterable[str] = DEFAULT_RESOURCES,
        rng: random.Random | None = None,
        delivery_latency_ns: int = 0,
    ):
        self.clock = clock or Clock()
        self.resources = tuple(resources)
        self._objects: dict[tuple[str, str, str], ApiObject] = {}
        self._by_uid: dict[str, tuple[str, str, str]] = {}
        self._next_version = 0
        self._subscribers: dict[str, list[EventStream]] = {r: [] for r in self.resources}
        self._dispatch: deque[tuple[EventStream, Op, ApiObject, ApiObject | None]] = deque()
        self._delivery_latency_ns = delivery_latency_ns
        self._rng = rng or random.Random(0)
        self._uid_prefix = f"{self._rng.getrandbits(64):016x}"
        self._uid_count = 0
        self.commit_log: list[CommitRecord] = []
        self.last_commit_ns: int | None = None

    # -- object access ------------------------------------------------

    def get(self, resource: str, namespace: str, name: str) -> ApiObject | None:
        return self._objects.get((resource, namespace, name))

    def get_by_uid(self, uid: str) -> ApiObject | None:
        key = self._by_uid.get(uid)
        return self._objects[key] if key is not None else None

    def list(self, resource: str) -> list[ApiObject]:
        self._check_resource(resource)
        return [o for o in self._objects.values() if o.resource == resource]

    def live_count(self, resource: str, labels: dict[str, str] | None = None) -> int:
        objs = self.list(resource)
        if labels:
            objs = [o for o in objs if all(o.meta.labels.get(k) == v for k, v in labels.items())]
        return len(objs)

    def owner_chain_contains(self, obj: ApiObject, root_uid: str) -> bool:
        """True when root_uid appears in obj's transitive live owner chain."""
        seen: set[str] = set()
        frontier = [r.uid for r in obj.meta.owner_references]
        while frontier:
            uid = frontier.pop()
            if uid == root_uid:
                return True
            if uid in seen:
                continue
            seen.add(uid)
            owner = self.get_by_uid(uid)
            if owner is not None:
                frontier.extend(r.uid for r in owner.meta.owner_references)
        return False

    # -- mutations ----------------------------------------------------

    def create(self, obj: ApiObject) -> ApiObject:
        self._check_resource(obj.resource)
        key = obj.key
        if key in self._objects:
            raise AlreadyExists(f"{'/'.join(key)} already exists")
        self._uid_count += 1
        self._next_version += 1
        committed = replace(
            obj,
            meta=replace(
                obj.meta,
                uid=f"{self._uid_prefix}-{self._uid_count:06d}",
                resource_version=self._next_version,
                creation_time_ns=self.clock.now(),
            ),
        )
        self._objects[key] = committed
        self._by_uid[committed.meta.uid] = key
        self._commit(Op.ADD, committed, None)
        return committed

    def update(self, obj: ApiObject) -> ApiObject:
        self._check_resource(obj.resource)
        current = self._objects.get(obj.key)
        if current is None or current.meta.uid != obj.meta.uid:
            raise NotFound(f"{'/'.join(obj.key)} is not live")
        if obj.meta.resource_version != current.meta.resource_version:
            raise StaleWrite(
                f"{'/'.join(obj.key)}: base version {obj.meta.resource_version} "
                f"!= current {current.meta.resource_version}"
            )
        self._next_version += 1
        committed = replace(
            obj,
            meta=replace(
                obj.meta,
                resource_version=self._next_version,
                creation_time_ns=current.meta.creation_time_ns,
            ),
        )
        self._objects[obj.key] = committed
        self._commit(Op.UPDATE, committed, current)
        return committed

    def delete(self, resource: str, namespace: str, name: str) -> ApiObject:
        self._check_resource(resource)
        key = (resource, namespace, name)
        current = self._objects.get(key)
        if current is None:
            raise NotFound(f"{'/'.join(key)} is not live")
        del self._objects[key]
        del self._by_uid[current.meta.uid]
        self._next_version += 1
        final = replace(current, meta=replace(current.meta, resource_version=self._next_version))
        self._commit(Op.DELETE, final, None)
        return final

    # -- subscriptions and delivery ------------------------------------

    def subscribe(self, resource: str) -> EventStream:
        self._check_resource(resource)
        stream = EventStream(resource)
        self._subscribers[resource].append(stream)
        return stream

    def _check_resource(self, resource: str) -> None:
        if resource not in self._subscribers:
            raise UnknownResource(f"resource {resource!r} is not registered")

    def _commit(self, op: Op, obj: ApiObject, old_obj: ApiObject | None) -> None:
        now = self.clock.now()
        self.commit_log.append(CommitRecord(op, obj, old_obj, now))
        self.last_commit_ns = now
        for stream in self._subscribers[obj.resource]:
            if self._delivery_latency_ns <= 0:
                self._dispatch.append((stream, op, obj, old_obj))
            else:
                self.clock.schedule_after(
                    self._delivery_latency_ns,
                    lambda s=stream, o=op, ob=obj, old=old_obj: self._dispatch.append(
                        (s, o, ob, old)
                    ),
                )

    def drain(self) -> int:
        """Deliver queued events until none are pending; returns delivery count."""
        delivered = 0
        while self._dispatch:
            stream, op, obj, old_obj = self._dispatch.popleft()
            stream._deliver(WatchEvent(time_ns=self.clock.now(), op=op, obj=obj, old_obj=old_obj))
            delivered += 1
        return delivered

    # -- time control ---------------------------------------------------

    def advance_clock(self, duration_ns: int) -> int:
        """Advance a virtual clock, firing due timers in order; returns count.

        Event delivery is interleaved after each timer so reactions to a
        timer land before the next one fires.
        """
        if not self.clock.virtual:
            raise WrongClockMode("advance_clock requires a virtual clock")
        target = self.clock.now() + duration_ns
        fired = 0
        self.drain()
        while True:
            deadline = self.clock.next_deadline()
            if deadline is None or deadline > target:
                break
            self.clock.fire_next()
            fired += 1
            self.drain()
        self.clock.advance_to(target)
        return fired

    def run_until(
        self,
        condition: Callable[[], bool] | None = None,
        deadline_ns: int | None = None,
    ) -> bool:
        """Drive deliveries and timers until condition holds.

        Returns False when the condition cannot be met: the deadline
        passed, or no timers remain to change anything. With no condition
        this runs to quiescence (no pending work) and returns True.
        """
        while True:
            self.drain()
            if condition is not None and condition():
                return True
            next_deadline = self.clock.next_deadline()
            if next_deadline is None:
                return condition is None
            if deadline_ns is not None and next_deadline > deadline_ns:
                return False
            if self.clock.virtual:
                self.clock.fire_next()
            else:
                wait = (next_deadline - self.clock.now()) / 1e9
                if wait > 0:
                    _time.sleep(wait)
                self.clock.fire_due()

    def run_until_quiescent(self, idle_window_ns: int, deadline_ns: int | None = None) -> bool:
        """Run until no commit lands for idle_window_ns; True when quiescent."""
        self.drain()
        while True:
            base = self.last_commit_ns if self.last_commit_ns is not None else self.clock.now()
            target = base + idle_window_ns
            if deadline_ns is not None and target > deadline_ns:
                return False
            next_deadline = self.clock.next_deadline()
            if next_deadline is not None and next_deadline <= target:
                if self.clock.virtual:
                    self.clock.fire_next()
                else:
                    _time.sleep(max(0.0, (next_deadline - self.clock.now()) / 1e9))
                    self.clock.fire_due()
                self.drain()
                continue
            if self.clock.virtual:
                self.clock.advance_to(target)
            else:
                _time.sleep(max(0.0, (target - self.clock.now()) / 1e9))
            if self.last_commit_ns is None or self.last_commit_ns <= base:
                return True
