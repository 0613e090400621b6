"""Configuration parsing shared by the runner and CLI.

Durations in config files are either bare numbers (milliseconds) or
strings with a unit suffix: "250ms", "1.5s", "50us", "100ns", "2m".
Parameter snapshots round-trip durations as exact "<n>ns" strings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .agent import AgentConfig, Batched, FlushPolicy, PerEntry
from .controllers import ControllerConfig, RateModel, SlowStartBatch, TokenBucket
from .emustore import DEFAULT_RESOURCES
from .errors import ConfigError

_UNIT_NS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000, "m": 60_000_000_000}
_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s|m)\s*$")


def parse_duration_ns(value: Any, where: str = "duration") -> int:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a duration, got a boolean")
    if isinstance(value, (int, float)):
        if value < 0:
            raise ConfigError(f"{where}: duration must be >= 0")
        return int(value * 1_000_000)  # bare numbers are milliseconds
    if isinstance(value, str):
        match = _DURATION_RE.match(value)
        if match:
            return int(float(match.group(1)) * _UNIT_NS[match.group(2)])
    raise ConfigError(f"{where}: cannot parse duration {value!r}")


def duration_to_text(ns: int) -> str:
    return f"{ns}ns"


def _require_mapping(raw: Any, where: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    return raw


def _check_keys(raw: dict, allowed: set[str], where: str) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def rate_model_from_mapping(raw: Any, where: str) -> RateModel:
    raw = _require_mapping(raw, where)
    kind = raw.get("kind")
    if kind == "tokenBucket":
        _check_keys(raw, {"kind", "rate", "burst"}, where)
        try:
            return TokenBucket(rate=float(raw.get("rate", 20.0)), burst=int(raw.get("burst", 1)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    if kind == "slowStartBatch":
        _check_keys(raw, {"kind", "initialBatch", "batchPeriod", "maxBatch"}, where)
        try:
            return SlowStartBatch(
                initial_batch=int(raw.get("initialBatch", 1)),
                batch_period_ns=parse_duration_ns(raw.get("batchPeriod", "100ms"), f"{where}.batchPeriod"),
                max_batch=int(raw.get("maxBatch", 500)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}.kind: expected tokenBucket or slowStartBatch, got {kind!r}")


def rate_model_to_mapping(model: RateModel) -> dict:
    if isinstance(model, TokenBucket):
        return {"kind": "tokenBucket", "rate": model.rate, "burst": model.burst}
    return {
        "kind": "slowStartBatch",
        "initialBatch": model.initial_batch,
        "batchPeriod": duration_to_text(model.batch_period_ns),
        "maxBatch": model.max_batch,
    }


def controller_config_from_mapping(raw: Any, where: str = "controllers") -> ControllerConfig:
    raw = _require_mapping(raw, where)
    _check_keys(raw, {"creation", "deletion", "reconcileDebounce", "namePrefixHashLength"}, where)
    defaults = ControllerConfig()
    try:
        return ControllerConfig(
            creation_model=(
                rate_model_from_mapping(raw["creation"], f"{where}.creation")
                if "creation" in raw
                else defaults.creation_model
            ),
            deletion_model=(
                rate_model_from_mapping(raw["deletion"], f"{where}.deletion")
                if "deletion" in raw
                else defaults.deletion_model
            ),
            reconcile_debounce_ns=parse_duration_ns(
                raw.get("reconcileDebounce", 0), f"{where}.reconcileDebounce"
            ),
            name_hash_length=int(raw.get("namePrefixHashLength", defaults.name_hash_length)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def controller_config_to_mapping(config: ControllerConfig) -> dict:
    return {
        "creation": rate_model_to_mapping(config.creation_model),
        "deletion": rate_model_to_mapping(config.deletion_model),
        "reconcileDebounce": duration_to_text(config.reconcile_debounce_ns),
        "namePrefixHashLength": config.name_hash_length,
    }


@dataclass(frozen=True)
class EmulatorSettings:
    resources: tuple[str, ...] = DEFAULT_RESOURCES
    delivery_latency_ns: int = 0


def emulator_settings_from_mapping(raw: Any, where: str = "emulator") -> EmulatorSettings:
    raw = _require_mapping(raw, where)
    _check_keys(raw, {"resources", "deliveryLatency"}, where)
    resources = raw.get("resources", list(DEFAULT_RESOURCES))
    if not isinstance(resources, list) or not all(isinstance(r, str) for r in resources):
        raise ConfigError(f"{where}.resources: expected a list of strings")
    return EmulatorSettings(
        resources=tuple(resources),
        delivery_latency_ns=parse_duration_ns(raw.get("deliveryLatency", 0), f"{where}.deliveryLatency"),
    )


def emulator_settings_to_mapping(settings: EmulatorSettings) -> dict:
    return {
        "resources": list(settings.resources),
        "deliveryLatency": duration_to_text(settings.delivery_latency_ns),
    }


@dataclass(frozen=True)
class AgentSettings:
    resources: tuple[str, ...] = ("deployments", "replicasets", "pods")
    flush: FlushPolicy = Batched()


def flush_policy_from_mapping(raw: Any, where: str) -> FlushPolicy:
    raw = _require_mapping(raw, where)
    mode = raw.get("mode", "batched")
    if mode == "perEntry":
        _check_keys(raw, {"mode"}, where)
        return PerEntry()
    if mode == "batched":
        _check_keys(raw, {"mode", "maxEntries", "maxDelay"}, where)
        try:
            return Batched(
                max_entries=int(raw.get("maxEntries", 256)),
                max_delay_ns=parse_duration_ns(raw.get("maxDelay", "50ms"), f"{where}.maxDelay"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}.mode: expected perEntry or batched, got {mode!r}")


def flush_policy_to_mapping(policy: FlushPolicy) -> dict:
    if isinstance(policy, PerEntry):
        return {"mode": "perEntry"}
    return {
        "mode": "batched",
        "maxEntries": policy.max_entries,
        "maxDelay": duration_to_text(policy.max_delay_ns),
    }


def agent_settings_from_mapping(raw: Any, where: str = "agent") -> AgentSettings:
    raw = _require_mapping(raw, where)
    _check_keys(raw, {"resources", "flush"}, where)
    defaults = AgentSettings()
    resources = raw.get("resources", list(defaults.resources))
    if not isinstance(resources, list) or not resources or not all(
        isinstance(r, str) for r in resources
    ):
        raise ConfigError(f"{where}.resources: expected a non-empty list of strings")
    if len(set(resources)) != len(resources):
        raise ConfigError(f"{where}.resources: names must be unique")
    flush = (
        flush_policy_from_mapping(raw["flush"], f"{where}.flush")
        if "flush" in raw
        else defaults.flush
    )
    return AgentSettings(resources=tuple(resources), flush=flush)


def agent_settings_to_mapping(settings: AgentSettings) -> dict:
    return {
        "resources": list(settings.resources),
        "flush": flush_policy_to_mapping(settings.flush),
    }


def agent_config_from_mapping(raw: Any, where: str = "agent") -> "AgentConfig":
    """Standalone agent config: resources, output path, flush policy."""
    raw = _require_mapping(raw, where)
    _check_keys(raw, {"resources", "output", "flush"}, where)
    if not isinstance(raw.get("output"), str) or not raw["output"]:
        raise ConfigError(f"{where}.output: expected a non-empty path")
    settings = agent_settings_from_mapping(
        {k: v for k, v in raw.items() if k != "output"}, where
    )
    return AgentConfig(
        resources=settings.resources,
        output_path=Path(raw["output"]),
        flush=settings.flush,
    )


def load_agent_config(path: str | Path) -> "AgentConfig":
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return agent_config_from_mapping(raw, str(path))


@dataclass(frozen=True)
class RunConfig:
    controllers: ControllerConfig = ControllerConfig()
    emulator: EmulatorSettings = EmulatorSettings()
    agent: AgentSettings = AgentSettings()


def run_config_from_mapping(raw: Any, where: str = "config") -> RunConfig:
    raw = _require_mapping(raw, where)
    _check_keys(raw, {"controllers", "emulator", "agent"}, where)
    return RunConfig(
        controllers=controller_config_from_mapping(raw.get("controllers"), f"{where}.controllers"),
        emulator=emulator_settings_from_mapping(raw.get("emulator"), f"{where}.emulator"),
        agent=agent_settings_from_mapping(raw.get("agent"), f"{where}.agent"),
    )


def run_config_to_mapping(config: RunConfig) -> dict:
    return {
        "controllers": controller_config_to_mapping(config.controllers),
        "emulator": emulator_settings_to_mapping(config.emulator),
        "agent": agent_settings_to_mapping(config.agent),
    }


def load_run_config(path: str | Path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return run_config_from_mapping(raw, str(path))
