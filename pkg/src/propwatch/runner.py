"""Scenario runner: snapshots parameters, starts the agent, drives object
changes against the emulator, waits for convergence, and finalizes logs.

Each repetition rebuilds the emulator, controllers, and agent from
scratch with a seed derived from (base seed, repetition), so repetitions
are independent measurements and a rerun from the parameter snapshot
reproduces every log file byte for byte under the virtual clock.
"""

from __future__ import annotations

import json
import random
import time as _time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping, Union

import yaml

from .agent import Agent, AgentConfig
from .config import (
    RunConfig,
    agent_settings_to_mapping,
    duration_to_text,
    parse_duration_ns,
    run_config_from_mapping,
    run_config_to_mapping,
)
from .controllers import install_controllers, model_completion_ns
from .emustore import Clock, Store
from .errors import BadParams, ConfigError, UnknownScenario
from .model import ApiObject, new_object

SECOND = 1_000_000_000


@dataclass(frozen=True)
class LiveCount:
    """Met when exactly `count` live objects of `resource` match the selector."""

    resource: str
    count: int
    labels: Mapping[str, str] | None = None
    owner_uid: str | None = None


@dataclass(frozen=True)
class Quiescence:
    """Met when no commit lands for `window_ns`."""

    window_ns: int

    def __post_init__(self) -> None:
        if self.window_ns <= 0:
            raise ValueError("quiescence window must be > 0")


Condition = Union[LiveCount, Quiescence]


@dataclass(frozen=True)
class CreateStep:
    template: ApiObject


@dataclass(frozen=True)
class UpdateStep:
    resource: str
    namespace: str
    name: str
    payload: Mapping[str, Any]


@dataclass(frozen=True)
class DeleteStep:
    resource: str
    namespace: str
    name: str


@dataclass(frozen=True)
class WaitStep:
    condition: Condition


@dataclass(frozen=True)
class SleepStep:
    duration_ns: int


Step = Union[CreateStep, UpdateStep, DeleteStep, WaitStep, SleepStep]


@dataclass(frozen=True)
class Scenario:
    name: str
    steps: tuple[Step, ...]
    convergence: Condition | None = None
    repeat: int = 1

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("scenario needs at least one step")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")


@dataclass
class RepResult:
    log_path: Path
    metrics_path: Path
    converged: bool
    detail: str = ""


@dataclass
class RunResult:
    out_dir: Path
    reps: list[RepResult]

    @property
    def converged(self) -> bool:
        return all(rep.converged for rep in self.reps)


def builtin_scenario(name: str, params: Mapping[str, Any]) -> Scenario:
    """Named ready-made scenarios; currently 'deployment-add-delete'."""
    if name != "deployment-add-delete":
        raise UnknownScenario(f"no builtin scenario named {name!r}")
    if "N" not in params:
        raise BadParams("deployment-add-delete needs parameter N")
    n = params["N"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 0:
        raise BadParams(f"N must be a non-negative integer, got {n!r}")
    extra = set(params) - {"N", "name", "namespace"}
    if extra:
        raise BadParams(f"unknown parameters {sorted(extra)}")
    dep_name = params.get("name", "web")
    namespace = params.get("namespace", "default")
    selector = {"app": dep_name}
    template = new_object(
        "deployments",
        name=dep_name,
        namespace=namespace,
        spec={"replicas": n, "template": {"labels": selector}},
    )
    return Scenario(
        name=f"deployment-add-delete-N{n}",
        steps=(
            CreateStep(template),
            WaitStep(LiveCount("pods", n, labels=selector)),
            DeleteStep("deployments", namespace, dep_name),
            WaitStep(LiveCount("pods", 0, labels=selector)),
        ),
        convergence=Quiescence(200_000_000),
    )


def evaluate_condition(store: Store, condition: LiveCount) -> bool:
    objs = store.list(condition.resource)
    if condition.labels:
        objs = [
            o for o in objs if all(o.meta.labels.get(k) == v for k, v in condition.labels.items())
        ]
    if condition.owner_uid is not None:
        objs = [o for o in objs if store.owner_chain_contains(o, condition.owner_uid)]
    return len(objs) == condition.count


def estimate_deadline_ns(scenario: Scenario, config: RunConfig) -> int:
    """Generous cap: 10x the analytic completion time of the largest cascade."""
    n = 1
    fixed = 0
    for step in scenario.steps:
        if isinstance(step, CreateStep):
            n = max(n, int(step.template.spec.get("replicas", 0) or 0))
        elif isinstance(step, UpdateStep):
            spec = step.payload.get("spec", {})
            if isinstance(spec, dict):
                n = max(n, int(spec.get("replicas", 0) or 0))
        elif isinstance(step, WaitStep):
            if isinstance(step.condition, LiveCount):
                n = max(n, step.condition.count)
            else:
                fixed += step.condition.window_ns
        elif isinstance(step, SleepStep):
            fixed += step.duration_ns
    if isinstance(scenario.convergence, Quiescence):
        fixed += scenario.convergence.window_ns
    work = model_completion_ns(config.controllers.creation_model, n) + model_completion_ns(
        config.controllers.deletion_model, n
    )
    settle = 10 * config.controllers.reconcile_debounce_ns + 10 * config.emulator.delivery_latency_ns
    return 10 * (work + fixed + settle) + SECOND


def _sleep(store: Store, duration_ns: int) -> None:
    if store.clock.virtual:
        store.advance_clock(duration_ns)
        return
    target = store.clock.now() + duration_ns
    while store.clock.now() < target:
        store.drain()
        store.clock.fire_due()
        _time.sleep(min(0.005, max(0.0, (target - store.clock.now()) / 1e9)))
    store.drain()


def _wait(store: Store, condition: Condition, deadline_ns: int) -> bool:
    if isinstance(condition, Quiescence):
        return store.run_until_quiescent(condition.window_ns, deadline_ns)
    return store.run_until(lambda: evaluate_condition(store, condition), deadline_ns)


def run_scenario(
    scenario: Scenario,
    config: RunConfig | None = None,
    out_dir: str | Path = "runs",
    seed: int = 0,
    clock_mode: str = Clock.VIRTUAL,
    repeat: int | None = None,
    deadline_ns: int | None = None,
) -> RunResult:
    """Execute a scenario; returns per-repetition results.

    The run directory receives params.snapshot, run-<k>.log,
    run-<k>.metrics, and status.json. A repetition that misses its
    convergence deadline keeps its partial log and is flagged.
    """
    config = config or RunConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    repetitions = repeat if repeat is not None else scenario.repeat
    deadline = deadline_ns if deadline_ns is not None else estimate_deadline_ns(scenario, config)

    snapshot = {
        "scenario": scenario_to_mapping(scenario),
        "config": run_config_to_mapping(config),
        "seed": seed,
        "clock": clock_mode,
        "repeat": repetitions,
        "deadline": duration_to_text(deadline),
    }
    (out / "params.snapshot").write_text(
        json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    reps: list[RepResult] = []
    for k in range(1, repetitions + 1):
        reps.append(_run_once(scenario, config, out, seed, k, clock_mode, deadline))
    result = RunResult(out, reps)
    status = {
        "complete": result.converged,
        "reps": [
            {"log": rep.log_path.name, "converged": rep.converged, "detail": rep.detail}
            for rep in reps
        ],
    }
    (out / "status.json").write_text(json.dumps(status, indent=2) + "\n", encoding="utf-8")
    return result


def _run_once(
    scenario: Scenario,
    config: RunConfig,
    out: Path,
    seed: int,
    rep: int,
    clock_mode: str,
    deadline_ns: int,
) -> RepResult:
    rng = random.Random(seed * 1_000_003 + rep)
    clock = Clock(clock_mode, start_ns=0)
    store = Store(
        clock=clock,
        resources=config.emulator.resources,
        rng=rng,
        delivery_latency_ns=config.emulator.delivery_latency_ns,
    )
    install_controllers(store, config.controllers, rng)
    log_path = out / f"run-{rep}.log"
    metrics_path = out / f"run-{rep}.metrics"
    log_path.unlink(missing_ok=True)
    metrics_path.unlink(missing_ok=True)
    agent = Agent(
        AgentConfig(
            resources=config.agent.resources,
            output_path=log_path,
            flush=config.agent.flush,
            metrics_path=metrics_path,
        ),
        store,
    ).start()

    deadline_abs = clock.now() + deadline_ns
    converged, detail = True, ""
    try:
        for i, step in enumerate(scenario.steps):
            if isinstance(step, CreateStep):
                store.create(step.template)
                store.drain()
            elif isinstance(step, UpdateStep):
                current = store.get(step.resource, step.namespace, step.name)
                if current is None:
                    raise ConfigError(
                        f"step {i}: update target "
                        f"{step.resource}/{step.namespace}/{step.name} is not live"
                    )
                store.update(_apply_payload(current, step.payload))
                store.drain()
            elif isinstance(step, DeleteStep):
                store.delete(step.resource, step.namespace, step.name)
                store.drain()
            elif isinstance(step, SleepStep):
                _sleep(store, step.duration_ns)
            elif isinstance(step, WaitStep):
                if not _wait(store, step.condition, deadline_abs):
                    converged, detail = False, f"step {i}: condition not met before deadline"
                    break
        if converged and scenario.convergence is not None:
            if not _wait(store, scenario.convergence, deadline_abs):
                converged, detail = False, "convergence condition not met before deadline"
    finally:
        agent.stop()
    return RepResult(log_path, metrics_path, converged, detail)


def run_from_snapshot(
    snapshot_path: str | Path, out_dir: str | Path, clock_mode: str | None = None
) -> RunResult:
    """Re-execute a run from its params.snapshot alone."""
    try:
        raw = json.loads(Path(snapshot_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load snapshot {snapshot_path}: {exc}") from None
    scenario = scenario_from_mapping(raw.get("scenario"), f"{snapshot_path}: scenario")
    config = run_config_from_mapping(raw.get("config"), f"{snapshot_path}: config")
    return run_scenario(
        scenario,
        config,
        out_dir,
        seed=int(raw.get("seed", 0)),
        clock_mode=clock_mode or raw.get("clock", Clock.VIRTUAL),
        repeat=int(raw.get("repeat", 1)),
        deadline_ns=parse_duration_ns(raw["deadline"], "deadline") if "deadline" in raw else None,
    )


def _apply_payload(obj: ApiObject, payload: Mapping[str, Any]) -> ApiObject:
    """Shallow-merge payload sections (spec/status/labels) onto an object."""
    updated = obj
    for section in ("spec", "status"):
        if section in payload:
            merged = dict(getattr(updated, section))
            merged.update(payload[section])
            updated = replace(updated, **{section: merged})
    if "labels" in payload:
        labels = dict(updated.meta.labels)
        labels.update(payload["labels"])
        updated = replace(updated, meta=replace(updated.meta, labels=labels))
    return updated


# ---------------------------------------------------------------------------
# Scenario (de)serialization: YAML files and the params snapshot.

def condition_to_mapping(condition: Condition) -> dict:
    if isinstance(condition, LiveCount):
        raw: dict[str, Any] = {"resource": condition.resource, "count": condition.count}
        if condition.labels:
            raw["labels"] = dict(condition.labels)
        if condition.owner_uid is not None:
            raw["ownerUid"] = condition.owner_uid
        return {"liveCount": raw}
    return {"quiescence": {"window": duration_to_text(condition.window_ns)}}


def condition_from_mapping(raw: Any, where: str) -> Condition:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError(f"{where}: expected one of liveCount/quiescence")
    kind, body = next(iter(raw.items()))
    if kind == "liveCount":
        if not isinstance(body, dict):
            raise ConfigError(f"{where}.liveCount: expected a mapping")
        unknown = set(body) - {"resource", "count", "labels", "ownerUid"}
        if unknown:
            raise ConfigError(f"{where}.liveCount: unknown keys {sorted(unknown)}")
        if not isinstance(body.get("resource"), str):
            raise ConfigError(f"{where}.liveCount.resource: expected a string")
        count = body.get("count")
        if isinstance(count, bool) or not isinstance(count, int) or count < 0:
            raise ConfigError(f"{where}.liveCount.count: expected a non-negative integer")
        labels = body.get("labels")
        if labels is not None and not isinstance(labels, dict):
            raise ConfigError(f"{where}.liveCount.labels: expected a mapping")
        return LiveCount(
            resource=body["resource"],
            count=count,
            labels=labels,
            owner_uid=body.get("ownerUid"),
        )
    if kind == "quiescence":
        if not isinstance(body, dict) or "window" not in body:
            raise ConfigError(f"{where}.quiescence: needs a window")
        try:
            return Quiescence(parse_duration_ns(body["window"], f"{where}.quiescence.window"))
        except ValueError as exc:
            raise ConfigError(f"{where}.quiescence: {exc}") from None
    raise ConfigError(f"{where}: unknown condition kind {kind!r}")


def _template_to_mapping(obj: ApiObject) -> dict:
    raw: dict[str, Any] = {
        "resource": obj.resource,
        "name": obj.meta.name,
        "namespace": obj.meta.namespace,
    }
    if obj.meta.labels:
        raw["labels"] = dict(obj.meta.labels)
    if obj.spec:
        raw["spec"] = dict(obj.spec)
    if obj.status:
        raw["status"] = dict(obj.status)
    return raw


def _template_from_mapping(raw: Any, where: str) -> ApiObject:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(raw) - {"resource", "name", "namespace", "labels", "spec", "status"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    for field_name in ("resource", "name"):
        if not isinstance(raw.get(field_name), str) or not raw[field_name]:
            raise ConfigError(f"{where}.{field_name}: expected a non-empty string")
    return new_object(
        raw["resource"],
        name=raw["name"],
        namespace=raw.get("namespace", "default"),
        labels=raw.get("labels"),
        spec=raw.get("spec"),
        status=raw.get("status"),
    )


def step_to_mapping(step: Step) -> dict:
    if isinstance(step, CreateStep):
        return {"create": _template_to_mapping(step.template)}
    if isinstance(step, UpdateStep):
        return {
            "update": {
                "resource": step.resource,
                "namespace": step.namespace,
                "name": step.name,
                "payload": dict(step.payload),
            }
        }
    if isinstance(step, DeleteStep):
        return {"delete": {"resource": step.resource, "namespace": step.namespace, "name": step.name}}
    if isinstance(step, WaitStep):
        return {"waitUntil": condition_to_mapping(step.condition)}
    return {"sleep": duration_to_text(step.duration_ns)}


def step_from_mapping(raw: Any, where: str) -> Step:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError(f"{where}: each step is a single-key mapping")
    kind, body = next(iter(raw.items()))
    if kind == "create":
        return CreateStep(_template_from_mapping(body, f"{where}.create"))
    if kind == "update":
        if not isinstance(body, dict):
            raise ConfigError(f"{where}.update: expected a mapping")
        unknown = set(body) - {"resource", "namespace", "name", "payload"}
        if unknown:
            raise ConfigError(f"{where}.update: unknown keys {sorted(unknown)}")
        payload = body.get("payload")
        if not isinstance(payload, dict):
            raise ConfigError(f"{where}.update.payload: expected a mapping")
        return UpdateStep(
            resource=body.get("resource", ""),
            namespace=body.get("namespace", "default"),
            name=body.get("name", ""),
            payload=payload,
        )
    if kind == "delete":
        if not isinstance(body, dict):
            raise ConfigError(f"{where}.delete: expected a mapping")
        return DeleteStep(
            resource=body.get("resource", ""),
            namespace=body.get("namespace", "default"),
            name=body.get("name", ""),
        )
    if kind == "waitUntil":
        return WaitStep(condition_from_mapping(body, f"{where}.waitUntil"))
    if kind == "sleep":
        return SleepStep(parse_duration_ns(body, f"{where}.sleep"))
    raise ConfigError(f"{where}: unknown step kind {kind!r}")


def scenario_to_mapping(scenario: Scenario) -> dict:
    raw: dict[str, Any] = {
        "name": scenario.name,
        "repeat": scenario.repeat,
        "steps": [step_to_mapping(step) for step in scenario.steps],
    }
    if scenario.convergence is not None:
        raw["convergence"] = condition_to_mapping(scenario.convergence)
    return raw


def scenario_from_mapping(raw: Any, where: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(raw) - {"name", "repeat", "steps", "convergence"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    steps_raw = raw.get("steps")
    if not isinstance(steps_raw, list) or not steps_raw:
        raise ConfigError(f"{where}.steps: expected a non-empty list")
    repeat = raw.get("repeat", 1)
    if isinstance(repeat, bool) or not isinstance(repeat, int) or repeat < 1:
        raise ConfigError(f"{where}.repeat: expected an integer >= 1")
    convergence = (
        condition_from_mapping(raw["convergence"], f"{where}.convergence")
        if "convergence" in raw
        else None
    )
    try:
        return Scenario(
            name=str(raw.get("name", "scenario")),
            steps=tuple(
                step_from_mapping(s, f"{where}.steps[{i}]") for i, s in enumerate(steps_raw)
            ),
            convergence=convergence,
            repeat=repeat,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return scenario_from_mapping(raw, str(path))
