"""Reconciliation loops that generate cascading changes.

Three controllers mirror the standard chain: deployments manage one
replica set each, replica sets drive their pod count toward
spec.replicas, and endpoints track the pods matching each service's
selector. Controllers only talk to the store — never to each other —
and read their own event-fed caches rather than querying live state.

Pod creation and deletion are paced by pluggable rate models: a token
bucket yields a constant operation rate, a slow-start batcher yields
doubling per-period batches (an accelerating rate).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, replace
from typing import Union

from .emustore import Store
from .errors import AlreadyExists, NotFound, StaleWrite
from .model import ApiObject, Op, OwnerRef, WatchEvent, new_object

MS = 1_000_000
SECOND = 1_000_000_000


@dataclass(frozen=True)
class TokenBucket:
    """Constant-rate pacing: `burst` ops immediately, then `rate` per second."""

    rate: float
    burst: int = 1

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError("TokenBucket rate must be > 0")
        if self.burst < 1:
            raise ValueError("TokenBucket burst must be >= 1")


@dataclass(frozen=True)
class SlowStartBatch:
    """Doubling batches: initial_batch·2^k ops per period, capped at max_batch."""

    initial_batch: int = 1
    batch_period_ns: int = 100 * MS
    max_batch: int = 500

    def __post_init__(self) -> None:
        if self.initial_batch < 1 or self.max_batch < 1:
            raise ValueError("SlowStartBatch batch sizes must be >= 1")
        if self.batch_period_ns <= 0:
            raise ValueError("SlowStartBatch period must be > 0")


RateModel = Union[TokenBucket, SlowStartBatch]


@dataclass(frozen=True)
class ControllerConfig:
    creation_model: RateModel = TokenBucket(rate=20.0, burst=1)
    deletion_model: RateModel = SlowStartBatch(initial_batch=1, batch_period_ns=100 * MS, max_batch=500)
    reconcile_debounce_ns: int = 0
    name_hash_length: int = 5

    def __post_init__(self) -> None:
        if self.reconcile_debounce_ns < 0:
            raise ValueError("reconcile debounce must be >= 0")
        if self.name_hash_length < 1:
            raise ValueError("name hash length must be >= 1")


def model_completion_ns(model: RateModel, n: int) -> int:
    """Time from the first to the last of n paced operations (analytic)."""
    if n <= 0:
        return 0
    if isinstance(model, TokenBucket):
        paced = max(0, n - model.burst)
        return math.ceil(paced / model.rate * SECOND)
    done, batch, periods = 0, model.initial_batch, 0
    while done < n:
        done += min(batch, model.max_batch)
        batch = min(batch * 2, model.max_batch)
        periods += 1
    return (periods - 1) * model.batch_period_ns


class _TokenBucketPacer:
    def __init__(self, model: TokenBucket, now_ns: int):
        self._model = model
        self._tokens = float(model.burst)
        self._last_ns = now_ns

    def grab(self, now_ns: int, want: int) -> tuple[int, int | None]:
        """Grant up to `want` ops now; also the instant the next op unblocks."""
        m = self._model
        self._tokens = min(float(m.burst), self._tokens + (now_ns - self._last_ns) * m.rate / SECOND)
        self._last_ns = now_ns
        granted = min(want, int(self._tokens + 1e-9))
        self._tokens -= granted
        if granted >= want:
            return granted, None
        wait_ns = math.ceil((1.0 - self._tokens) / m.rate * SECOND)
        return granted, now_ns + wait_ns

    def reset(self) -> None:
        pass  # the bucket refills on its own; idle periods need no state change


class _SlowStartPacer:
    def __init__(self, model: SlowStartBatch):
        self._model = model
        self._next_batch: int | None = None  # None = idle
        self._next_fire_ns = 0

    def grab(self, now_ns: int, want: int) -> tuple[int, int | None]:
        m = self._model
        if self._next_batch is None:
            self._next_batch = min(m.initial_batch, m.max_batch)
            self._next_fire_ns = now_ns
        if now_ns < self._next_fire_ns:
            return 0, self._next_fire_ns
        granted = min(want, self._next_batch)
        self._next_batch = min(self._next_batch * 2, m.max_batch)
        self._next_fire_ns = now_ns + m.batch_period_ns
        if granted >= want:
            self.reset()
            return granted, None
        return granted, self._next_fire_ns

    def reset(self) -> None:
        self._next_batch = None


def _make_pacer(model: RateModel, now_ns: int):
    if isinstance(model, TokenBucket):
        return _TokenBucketPacer(model, now_ns)
    return _SlowStartPacer(model)


class _BaseController:
    """Shared plumbing: debounced per-key reconciles and retry-tolerant writes."""

    def __init__(self, store: Store, config: ControllerConfig, seed: int):
        self.store = store
        self.config = config
        self.seed = seed
        self.reconcile_count = 0
        self._debounce_pending: set = set()

    def _suffix(self, parent_uid: str, ordinal: int) -> str:
        digest = hashlib.blake2b(
            f"{self.seed}:{parent_uid}:{ordinal}".encode(), digest_size=8
        ).hexdigest()
        return digest[: self.config.name_hash_length]

    def _kick(self, key) -> None:
        debounce = self.config.reconcile_debounce_ns
        if debounce <= 0:
            self.reconcile_count += 1
            self._reconcile(key)
            return
        if key in self._debounce_pending:
            return
        self._debounce_pending.add(key)

        def fire() -> None:
            self._debounce_pending.discard(key)
            self.reconcile_count += 1
            self._reconcile(key)

        self.store.clock.schedule_after(debounce, fire)

    def _reconcile(self, key) -> None:
        raise NotImplementedError

    def _try_update(self, obj: ApiObject) -> None:
        # Stale or vanished objects retry naturally on the next event.
        try:
            self.store.update(obj)
        except (StaleWrite, NotFound):
            pass

    def _try_delete(self, obj: ApiObject) -> None:
        try:
            self.store.delete(obj.resource, obj.meta.namespace, obj.meta.name)
        except NotFound:
            pass


def _owner_uid(obj: ApiObject, resource: str) -> str | None:
    for ref in obj.meta.owner_references:
        if ref.resource == resource:
            return ref.uid
    return None


class DeploymentController(_BaseController):
    """Keeps exactly one replica set per deployment in sync with its spec."""

    def __init__(self, store: Store, config: ControllerConfig, seed: int):
        super().__init__(store, config, seed)
        self._deployments: dict[str, ApiObject] = {}
        self._replicasets: dict[str, ApiObject] = {}
        self._ordinal: dict[str, int] = {}
        self._creating: set[str] = set()
        store.subscribe("deployments").attach(self._on_deployment)
        store.subscribe("replicasets").attach(self._on_replicaset)

    def _on_deployment(self, event: WatchEvent) -> None:
        uid = event.obj.meta.uid
        if event.op is Op.DELETE:
            self._deployments.pop(uid, None)
        else:
            self._deployments[uid] = event.obj
        self._kick(uid)

    def _on_replicaset(self, event: WatchEvent) -> None:
        uid = event.obj.meta.uid
        owner = _owner_uid(event.obj, "deployments")
        if event.op is Op.DELETE:
            self._replicasets.pop(uid, None)
        else:
            self._replicasets[uid] = event.obj
            if owner is not None:
                self._creating.discard(owner)
        if owner is not None:
            self._kick(owner)

    def _owned(self, dep_uid: str) -> list[ApiObject]:
        return sorted(
            (rs for rs in self._replicasets.values() if _owner_uid(rs, "deployments") == dep_uid),
            key=lambda rs: rs.meta.name,
        )

    def _reconcile(self, dep_uid: str) -> None:
        dep = self._deployments.get(dep_uid)
        owned = self._owned(dep_uid)
        if dep is None:
            for rs in owned:
                self._try_delete(rs)
            return
        if not owned:
            if dep_uid not in self._creating:
                ordinal = self._ordinal.get(dep_uid, 0)
                self._ordinal[dep_uid] = ordinal + 1
                template = dep.spec.get("template", {})
                rs = new_object(
                    "replicasets",
                    name=f"{dep.meta.name}-{self._suffix(dep_uid, ordinal)}",
                    namespace=dep.meta.namespace,
                    labels=dict(template.get("labels", {})),
                    owner_references=(OwnerRef("deployments", dep.meta.name, dep_uid),),
                    spec={"replicas": dep.spec.get("replicas", 0), "template": template},
                )
                self._creating.add(dep_uid)
                try:
                    self.store.create(rs)
                except AlreadyExists:
                    self._creating.discard(dep_uid)
            return
        rs = owned[0]
        for extra in owned[1:]:
            self._try_delete(extra)
        want_replicas = dep.spec.get("replicas", 0)
        want_template = dep.spec.get("template", {})
        if rs.spec.get("replicas") != want_replicas or rs.spec.get("template", {}) != want_template:
            spec = dict(rs.spec)
            spec["replicas"] = want_replicas
            spec["template"] = want_template
            self._try_update(replace(rs, spec=spec))
        observed = rs.status.get("replicas", 0)
        if dep.status.get("replicas", 0) != observed:
            status = dict(dep.status)
            status["replicas"] = observed
            self._try_update(replace(dep, status=status))


class ReplicaSetController(_BaseController):
    """Drives owned-pod count toward spec.replicas, paced by the rate models.

    Pods created but not yet observed (and deletes issued but not yet
    observed) are tracked so a reconcile never double-schedules work off
    a stale cache.
    """

    def __init__(self, store: Store, config: ControllerConfig, seed: int):
        super().__init__(store, config, seed)
        self._replicasets: dict[str, ApiObject] = {}
        self._pods: dict[str, dict[str, ApiObject]] = {}
        self._pod_owner: dict[str, str] = {}
        self._pending_create: dict[str, set[str]] = {}
        self._pending_delete: dict[str, set[str]] = {}
        self._creators: dict[str, object] = {}
        self._deleters: dict[str, object] = {}
        self._timers_armed: set[tuple[str, str]] = set()
        self._ordinal: dict[str, int] = {}
        store.subscribe("replicasets").attach(self._on_replicaset)
        store.subscribe("pods").attach(self._on_pod)

    def _on_replicaset(self, event: WatchEvent) -> None:
        uid = event.obj.meta.uid
        if event.op is Op.DELETE:
            self._replicasets.pop(uid, None)
        else:
            self._replicasets[uid] = event.obj
        self._kick(uid)

    def _on_pod(self, event: WatchEvent) -> None:
        pod = event.obj
        owner = _owner_uid(pod, "replicasets")
        if owner is None:
            return
        uid = pod.meta.uid
        if event.op is Op.DELETE:
            self._pods.get(owner, {}).pop(uid, None)
            self._pod_owner.pop(uid, None)
            self._pending_delete.get(owner, set()).discard(uid)
        else:
            self._pods.setdefault(owner, {})[uid] = pod
            self._pod_owner[uid] = owner
            if event.op is Op.ADD:
                self._pending_create.get(owner, set()).discard(pod.meta.name)
        self._kick(owner)

    def _arm(self, rs_uid: str, direction: str, at_ns: int) -> None:
        key = (rs_uid, direction)
        if key in self._timers_armed:
            return
        self._timers_armed.add(key)

        def fire() -> None:
            self._timers_armed.discard(key)
            self._kick(rs_uid)

        self.store.clock.schedule(at_ns, fire)

    def _reconcile(self, rs_uid: str) -> None:
        rs = self._replicasets.get(rs_uid)
        owned = self._pods.get(rs_uid, {})
        pending_create = self._pending_create.setdefault(rs_uid, set())
        pending_delete = self._pending_delete.setdefault(rs_uid, set())
        desired = rs.spec.get("replicas", 0) if rs is not None else 0
        effective = len(owned) - len(pending_delete) + len(pending_create)
        now = self.store.clock.now()
        if desired > effective and rs is not None:
            self._create_pods(rs, desired - effective, now)
        elif desired < effective:
            self._delete_pods(rs_uid, effective - desired, now)
        else:
            for pacer in (self._creators.get(rs_uid), self._deleters.get(rs_uid)):
                if pacer is not None:
                    pacer.reset()
        if rs is not None:
            observed = len(owned)
            if rs.status.get("replicas", 0) != observed:
                status = dict(rs.status)
                status["replicas"] = observed
                self._try_update(replace(rs, status=status))
        elif not owned and not pending_create and not pending_delete:
            for state in (self._pods, self._pending_create, self._pending_delete,
                          self._creators, self._deleters, self._ordinal):
                state.pop(rs_uid, None)

    def _create_pods(self, rs: ApiObject, want: int, now: int) -> None:
        rs_uid = rs.meta.uid
        pacer = self._creators.get(rs_uid)
        if pacer is None:
            pacer = self._creators[rs_uid] = _make_pacer(self.config.creation_model, now)
        granted, next_ns = pacer.grab(now, want)
        template = rs.spec.get("template", {})
        for _ in range(granted):
            ordinal = self._ordinal.get(rs_uid, 0)
            self._ordinal[rs_uid] = ordinal + 1
            name = f"{rs.meta.name}-{self._suffix(rs_uid, ordinal)}"
            pod = new_object(
                "pods",
                name=name,
                namespace=rs.meta.namespace,
                labels=dict(template.get("labels", {})),
                owner_references=(OwnerRef("replicasets", rs.meta.name, rs_uid),),
            )
            self._pending_create[rs_uid].add(name)
            try:
                self.store.create(pod)
            except AlreadyExists:
                self._pending_create[rs_uid].discard(name)
        if granted < want and next_ns is not None:
            self._arm(rs_uid, "create", next_ns)

    def _delete_pods(self, rs_uid: str, want: int, now: int) -> None:
        pacer = self._deleters.get(rs_uid)
        if pacer is None:
            pacer = self._deleters[rs_uid] = _make_pacer(self.config.deletion_model, now)
        granted, next_ns = pacer.grab(now, want)
        pending = self._pending_delete[rs_uid]
        # Newest pods go first, mirroring scale-down preference; ties by name.
        victims = sorted(
            (p for p in self._pods.get(rs_uid, {}).values() if p.meta.uid not in pending),
            key=lambda p: (-p.meta.creation_time_ns, p.meta.name),
        )
        for pod in victims[:granted]:
            try:
                self.store.delete(pod.resource, pod.meta.namespace, pod.meta.name)
                pending.add(pod.meta.uid)
            except NotFound:
                pass
        if granted < want and next_ns is not None:
            self._arm(rs_uid, "delete", next_ns)


class EndpointsController(_BaseController):
    """Maintains one endpoints object per service listing selector-matched pods."""

    def __init__(self, store: Store, config: ControllerConfig, seed: int):
        super().__init__(store, config, seed)
        self._services: dict[str, ApiObject] = {}
        self._pods: dict[str, ApiObject] = {}
        self._endpoints: dict[tuple[str, str], ApiObject] = {}
        self._creating: set[tuple[str, str]] = set()
        store.subscribe("services").attach(self._on_service)
        store.subscribe("pods").attach(self._on_pod)
        store.subscribe("endpoints").attach(self._on_endpoints)

    def _on_service(self, event: WatchEvent) -> None:
        uid = event.obj.meta.uid
        if event.op is Op.DELETE:
            self._services.pop(uid, None)
        else:
            self._services[uid] = event.obj
        self._kick((event.obj.meta.namespace, event.obj.meta.name))

    def _on_pod(self, event: WatchEvent) -> None:
        uid = event.obj.meta.uid
        if event.op is Op.DELETE:
            self._pods.pop(uid, None)
        else:
            self._pods[uid] = event.obj
        for key in sorted(
            (svc.meta.namespace, svc.meta.name) for svc in self._services.values()
        ):
            self._kick(key)

    def _on_endpoints(self, event: WatchEvent) -> None:
        key = (event.obj.meta.namespace, event.obj.meta.name)
        if event.op is Op.DELETE:
            self._endpoints.pop(key, None)
        else:
            self._endpoints[key] = event.obj
            self._creating.discard(key)
        self._kick(key)

    def _service_for(self, key: tuple[str, str]) -> ApiObject | None:
        for svc in self._services.values():
            if (svc.meta.namespace, svc.meta.name) == key:
                return svc
        return None

    def _reconcile(self, key: tuple[str, str]) -> None:
        namespace, name = key
        svc = self._service_for(key)
        endpoints = self._endpoints.get(key)
        if svc is None:
            if endpoints is not None:
                self._try_delete(endpoints)
            return
        selector = svc.spec.get("selector") or {}
        matching = sorted(
            (pod.meta.name, pod.meta.uid)
            for pod in self._pods.values()
            if pod.meta.namespace == namespace
            and selector
            and all(pod.meta.labels.get(k) == v for k, v in selector.items())
        )
        desired_status = {"addresses": [{"name": n, "uid": u} for n, u in matching]}
        if endpoints is None:
            if key not in self._creating:
                self._creating.add(key)
                try:
                    self.store.create(
                        new_object("endpoints", name=name, namespace=namespace, status=desired_status)
                    )
                except AlreadyExists:
                    self._creating.discard(key)
        elif endpoints.status != desired_status:
            self._try_update(replace(endpoints, status=desired_status))


def install_controllers(
    store: Store, config: ControllerConfig | None = None, rng: random.Random | None = None
) -> list[_BaseController]:
    """Wire the three controllers onto a store; returns them in install order."""
    config = config or ControllerConfig()
    rng = rng or random.Random(0)
    seed = rng.getrandbits(32)
    return [
        DeploymentController(store, config, seed),
        ReplicaSetController(store, config, seed),
        EndpointsController(store, config, seed),
    ]
