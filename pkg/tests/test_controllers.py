"""Controller behavior: cascading creation/deletion, rate-model schedules,
convergence, ownership, and idempotence."""

import random

import pytest

from propwatch.controllers import (
    ControllerConfig,
    SlowStartBatch,
    TokenBucket,
    install_controllers,
    model_completion_ns,
)
from propwatch.emustore import Clock, Store
from propwatch.model import Op, new_object, with_spec

from helpers import slow_start_batches, token_bucket_offsets_ns

MS = 1_000_000
HOUR = 3_600 * 10**9


def build(config=None, seed=0):
    store = Store(clock=Clock(Clock.VIRTUAL), rng=random.Random(seed))
    controllers = install_controllers(store, config, random.Random(seed))
    return store, controllers


def make_deployment(name="web", replicas=3, labels=None):
    labels = labels or {"app": name}
    return new_object(
        "deployments", name, spec={"replicas": replicas, "template": {"labels": labels}}
    )


def settle(store):
    store.run_until(deadline_ns=store.clock.now() + HOUR)


class TestDeploymentController:
    def test_add_creates_owned_replicaset(self):
        store, _ = build()
        dep = store.create(make_deployment(replicas=4))
        store.drain()
        replicasets = store.list("replicasets")
        assert len(replicasets) == 1
        rs = replicasets[0]
        assert rs.meta.name.startswith("web-")
        assert rs.spec["replicas"] == 4
        assert rs.spec["template"]["labels"] == {"app": "web"}
        assert [ref.uid for ref in rs.meta.owner_references] == [dep.meta.uid]

    def test_delete_cascades_to_replicaset(self):
        store, _ = build()
        store.create(make_deployment())
        settle(store)
        store.delete("deployments", "default", "web")
        settle(store)
        assert store.list("replicasets") == []

    def test_noop_update_produces_no_mutations(self):
        store, _ = build()
        dep = store.create(make_deployment(replicas=4))
        settle(store)
        commits_before = len(store.commit_log)
        current = store.get("deployments", "default", "web")
        store.update(current)  # same spec: one Update commit, nothing cascades
        settle(store)
        ops = [(c.op, c.obj.resource) for c in store.commit_log[commits_before:]]
        assert ops == [(Op.UPDATE, "deployments")]

    def test_replica_update_propagates_to_replicaset(self):
        store, _ = build()
        store.create(make_deployment(replicas=2))
        settle(store)
        dep = store.get("deployments", "default", "web")
        store.update(with_spec(dep, replicas=5))
        settle(store)
        rs = store.list("replicasets")[0]
        assert rs.spec["replicas"] == 5
        assert store.live_count("pods") == 5

    def test_deleted_replicaset_is_recreated(self):
        store, _ = build()
        store.create(make_deployment(replicas=1))
        settle(store)
        old_name = store.list("replicasets")[0].meta.name
        store.delete("replicasets", "default", old_name)
        settle(store)
        replicasets = store.list("replicasets")
        assert len(replicasets) == 1
        assert replicasets[0].meta.name != old_name

    def test_status_mirrors_observed_replicas(self):
        store, _ = build()
        store.create(make_deployment(replicas=3))
        settle(store)
        assert store.get("deployments", "default", "web").status["replicas"] == 3


class TestReplicaSetSchedules:
    def test_token_bucket_pod_times_match_closed_form(self):
        # rate 10/s, burst 1, replicas 5 -> adds at 0,100,200,300,400 ms
        config = ControllerConfig(creation_model=TokenBucket(rate=10.0, burst=1))
        store, _ = build(config)
        store.create(make_deployment(replicas=5))
        settle(store)
        adds = [c.time_ns for c in store.commit_log if c.obj.resource == "pods" and c.op is Op.ADD]
        assert adds == token_bucket_offsets_ns(10.0, 1, 5)
        assert adds == [0, 100 * MS, 200 * MS, 300 * MS, 400 * MS]

    def test_burst_allows_parallel_initial_creates(self):
        config = ControllerConfig(creation_model=TokenBucket(rate=10.0, burst=3))
        store, _ = build(config)
        store.create(make_deployment(replicas=5))
        settle(store)
        adds = [c.time_ns for c in store.commit_log if c.obj.resource == "pods" and c.op is Op.ADD]
        assert adds == token_bucket_offsets_ns(10.0, 3, 5)
        assert adds == [0, 0, 0, 100 * MS, 200 * MS]

    def test_slow_start_deletion_batches_double(self):
        # 7 live pods, initial batch 1 -> per-period deletions 1, 2, 4
        config = ControllerConfig(
            creation_model=TokenBucket(rate=1000.0, burst=1000),
            deletion_model=SlowStartBatch(initial_batch=1, batch_period_ns=100 * MS),
        )
        store, _ = build(config)
        store.create(make_deployment(replicas=7))
        settle(store)
        assert store.live_count("pods") == 7
        t0 = store.clock.now()
        store.delete("deployments", "default", "web")
        settle(store)
        deletes = [
            c.time_ns - t0
            for c in store.commit_log
            if c.obj.resource == "pods" and c.op is Op.DELETE
        ]
        by_period = {}
        for offset in deletes:
            by_period[offset // (100 * MS)] = by_period.get(offset // (100 * MS), 0) + 1
        assert [by_period[k] for k in sorted(by_period)] == [1, 2, 4]
        assert slow_start_batches(1, 500, 7) == [1, 2, 4]

    def test_slow_start_creation_supported_too(self):
        config = ControllerConfig(
            creation_model=SlowStartBatch(initial_batch=2, batch_period_ns=50 * MS, max_batch=8)
        )
        store, _ = build(config)
        store.create(make_deployment(replicas=30))
        settle(store)
        adds = [c.time_ns for c in store.commit_log if c.obj.resource == "pods" and c.op is Op.ADD]
        per_period = {}
        for offset in adds:
            per_period[offset // (50 * MS)] = per_period.get(offset // (50 * MS), 0) + 1
        assert [per_period[k] for k in sorted(per_period)] == slow_start_batches(2, 8, 30)

    def test_zero_replicas_creates_no_pods(self):
        store, _ = build()
        store.create(make_deployment(replicas=0))
        settle(store)
        assert store.live_count("pods") == 0

    def test_scale_down_deletes_surplus_only(self):
        config = ControllerConfig(creation_model=TokenBucket(rate=10_000.0, burst=100))
        store, _ = build(config)
        store.create(make_deployment(replicas=6))
        settle(store)
        dep = store.get("deployments", "default", "web")
        store.update(with_spec(dep, replicas=2))
        settle(store)
        assert store.live_count("pods") == 2

    def test_externally_deleted_pod_is_replaced(self):
        store, _ = build()
        store.create(make_deployment(replicas=2))
        settle(store)
        victim = store.list("pods")[0]
        store.delete("pods", "default", victim.meta.name)
        settle(store)
        assert store.live_count("pods") == 2

    def test_completion_estimates(self):
        assert model_completion_ns(TokenBucket(rate=20.0, burst=1), 100) == round(99 / 20 * 1e9)
        assert model_completion_ns(SlowStartBatch(1, 100 * MS, 500), 100) == 600 * MS
        assert model_completion_ns(TokenBucket(rate=20.0, burst=1), 0) == 0


class TestInvariantsAfterConvergence:
    def test_ownership_and_replica_counts(self):
        config = ControllerConfig(creation_model=TokenBucket(rate=1000.0, burst=50))
        store, _ = build(config)
        store.create(make_deployment("web", replicas=5))
        store.create(make_deployment("api", replicas=3, labels={"app": "api"}))
        settle(store)
        for rs in store.list("replicasets"):
            owned = [
                p
                for p in store.list("pods")
                if any(ref.uid == rs.meta.uid for ref in p.meta.owner_references)
            ]
            assert len(owned) == rs.spec["replicas"]
            for pod in owned:
                assert [r.uid for r in pod.meta.owner_references] == [rs.meta.uid]
                assert pod.meta.name.startswith(rs.meta.name + "-")

    def test_idempotent_at_fixed_point(self):
        store, controllers = build()
        store.create(make_deployment(replicas=3))
        store.create(new_object("services", "svc", spec={"selector": {"app": "web"}}))
        settle(store)
        commits = len(store.commit_log)
        # replay current state of every object through every reconcile path
        for controller in controllers:
            keys = set()
            if hasattr(controller, "_deployments"):
                keys = set(controller._deployments)
            elif hasattr(controller, "_replicasets"):
                keys = set(controller._replicasets)
            elif hasattr(controller, "_services"):
                keys = {(s.meta.namespace, s.meta.name) for s in controller._services.values()}
            for key in keys:
                controller._reconcile(key)
        settle(store)
        assert len(store.commit_log) == commits

    def test_virtual_run_reproducible(self):
        def run(seed):
            store, _ = build(seed=seed)
            store.create(make_deployment(replicas=10))
            settle(store)
            store.delete("deployments", "default", "web")
            settle(store)
            return [(c.op, c.obj.resource, c.obj.meta.name, c.time_ns) for c in store.commit_log]

        assert run(3) == run(3)


class TestEndpointsController:
    def test_endpoints_list_matching_pods(self):
        store, _ = build()
        store.create(make_deployment(replicas=2))
        settle(store)
        store.create(new_object("services", "websvc", spec={"selector": {"app": "web"}}))
        settle(store)
        endpoints = store.get("endpoints", "default", "websvc")
        addresses = endpoints.status["addresses"]
        assert len(addresses) == 2
        pod_uids = {p.meta.uid for p in store.list("pods")}
        assert {a["uid"] for a in addresses} == pod_uids

    def test_matching_pod_delete_updates_endpoints(self):
        store, _ = build()
        store.create(make_deployment(replicas=2))
        settle(store)
        store.create(new_object("services", "websvc", spec={"selector": {"app": "web"}}))
        settle(store)
        victim = store.list("pods")[0]
        store.delete("pods", "default", victim.meta.name)
        settle(store)  # the replicaset controller recreates one pod
        endpoints = store.get("endpoints", "default", "websvc")
        addresses = endpoints.status["addresses"]
        assert len(addresses) == 2
        assert victim.meta.uid not in {a["uid"] for a in addresses}

    def test_non_matching_pod_ignored(self):
        store, _ = build()
        store.create(new_object("services", "websvc", spec={"selector": {"app": "web"}}))
        settle(store)
        before = store.get("endpoints", "default", "websvc")
        store.create(new_object("pods", "db-pod", labels={"app": "db"}))
        settle(store)
        after = store.get("endpoints", "default", "websvc")
        assert before.status == after.status == {"addresses": []}

    def test_selector_subset_semantics(self):
        store, _ = build()
        store.create(new_object("services", "websvc", spec={"selector": {"app": "web"}}))
        store.create(new_object("pods", "p1", labels={"app": "web", "tier": "fe"}))
        settle(store)
        endpoints = store.get("endpoints", "default", "websvc")
        assert [a["name"] for a in endpoints.status["addresses"]] == ["p1"]

    def test_service_delete_removes_endpoints(self):
        store, _ = build()
        store.create(new_object("services", "websvc", spec={"selector": {"app": "web"}}))
        settle(store)
        store.delete("services", "default", "websvc")
        settle(store)
        assert store.get("endpoints", "default", "websvc") is None

    def test_endpoints_match_exact_set_after_convergence(self):
        store, _ = build(ControllerConfig(creation_model=TokenBucket(rate=1000.0, burst=10)))
        store.create(new_object("services", "s1", spec={"selector": {"app": "web"}}))
        store.create(make_deployment("web", replicas=4))
        store.create(make_deployment("api", replicas=2, labels={"app": "api"}))
        settle(store)
        endpoints = store.get("endpoints", "default", "s1")
        expect = sorted(
            (p.meta.name, p.meta.uid)
            for p in store.list("pods")
            if p.meta.labels.get("app") == "web"
        )
        assert endpoints.status["addresses"] == [{"name": n, "uid": u} for n, u in expect]


class TestDebounce:
    def test_debounce_coalesces_reconciles(self):
        config = ControllerConfig(reconcile_debounce_ns=50 * MS)
        store, controllers = build(config)
        dep_controller = controllers[0]
        store.create(make_deployment(replicas=1))
        store.drain()
        assert store.list("replicasets") == []  # nothing until the window elapses
        before = dep_controller.reconcile_count
        store.advance_clock(50 * MS)
        settle(store)
        assert store.list("replicasets") != []
        assert dep_controller.reconcile_count > before

    def test_debounced_run_still_converges(self):
        config = ControllerConfig(reconcile_debounce_ns=10 * MS)
        store, _ = build(config)
        store.create(make_deployment(replicas=3))
        settle(store)
        assert store.live_count("pods") == 3
