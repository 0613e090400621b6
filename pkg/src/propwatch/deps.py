"""Dependency rules and their resolution into object-level edges.

A rule names a parent and child resource and one of three relationship
kinds: owner (child's ownerReferences carry the parent uid), name prefix
(child is named "<parent>-..."), or label (a selector map in the parent
is a subset of the child's labels). Resolving rules over a log yields
directed parent→child edges between concrete objects; an edge exists
when any logged snapshot of the child matches any logged snapshot of the
parent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from .errors import ConfigError, SelectorMissing
from .model import ApiObject, LogEntry

DEFAULT_SELECTOR_FIELD = "spec.selector"


class RuleKind(Enum):
    OWNER = "owner"
    NAME_PREFIX = "namePrefix"
    LABEL = "label"


@dataclass(frozen=True)
class DependencyRule:
    kind: RuleKind
    parent_resource: str
    child_resource: str
    selector_field: str | None = None

    def __post_init__(self) -> None:
        if self.kind is RuleKind.LABEL:
            if self.selector_field is None:
                object.__setattr__(self, "selector_field", DEFAULT_SELECTOR_FIELD)
        elif self.selector_field is not None:
            raise ValueError("selector_field only applies to label rules")
        if self.parent_resource == self.child_resource and self.kind is not RuleKind.OWNER:
            raise ValueError("same-resource rules are only valid for owner relationships")

    def describe(self) -> str:
        return f"{self.kind.value}:{self.parent_resource}->{self.child_resource}"


@dataclass(frozen=True)
class ObjectEdge:
    parent_uid: str
    child_uid: str
    rule: DependencyRule


def read_field(obj: ApiObject, path: str) -> Any:
    """Navigate a dotted path rooted at 'spec' or 'status'; None when absent."""
    head, _, rest = path.partition(".")
    if head == "spec":
        value: Any = obj.spec
    elif head == "status":
        value = obj.status
    else:
        return None
    for segment in rest.split(".") if rest else []:
        if not isinstance(value, dict) or segment not in value:
            return None
        value = value[segment]
    return value


def matches_rule(rule: DependencyRule, parent: ApiObject, child: ApiObject) -> bool:
    """Evaluate one rule on one (parent, child) snapshot pair."""
    if parent.resource != rule.parent_resource or child.resource != rule.child_resource:
        return False
    if parent.meta.uid == child.meta.uid:
        return False
    if rule.kind is RuleKind.OWNER:
        return any(ref.uid == parent.meta.uid for ref in child.meta.owner_references)
    if rule.kind is RuleKind.NAME_PREFIX:
        return child.meta.name.startswith(parent.meta.name + "-")
    selector = read_field(parent, rule.selector_field or DEFAULT_SELECTOR_FIELD)
    if selector is None or not isinstance(selector, dict):
        raise SelectorMissing(
            f"{parent.resource}/{parent.meta.name}: no selector at {rule.selector_field}"
        )
    if not selector:
        return False
    return all(child.meta.labels.get(k) == v for k, v in selector.items())


def _snapshots(entries: Iterable[LogEntry]):
    """Group every logged object state (Obj and OldObj) by uid, in log order."""
    by_uid: dict[str, list[ApiObject]] = {}
    for entry in entries:
        for snap in (entry.obj, entry.old_obj):
            if snap is not None:
                by_uid.setdefault(snap.meta.uid, []).append(snap)
    return by_uid


def resolve_edges(
    entries: Sequence[LogEntry], rules: Sequence[DependencyRule]
) -> list[ObjectEdge]:
    """Deduplicated parent→child edges over all snapshot pairs in the log.

    Indexed by uid, name, and label map per kind; output is identical to
    evaluating matches_rule over every ordered pair of objects, sorted
    deterministically regardless of entry order.
    """
    by_uid = _snapshots(entries)
    uids_by_resource: dict[str, list[str]] = {}
    for uid, snaps in by_uid.items():
        for resource in {s.resource for s in snaps}:
            uids_by_resource.setdefault(resource, []).append(uid)

    edges: set[ObjectEdge] = set()
    for rule in set(rules):
        parents = [
            uid
            for uid in uids_by_resource.get(rule.parent_resource, [])
            if any(s.resource == rule.parent_resource for s in by_uid[uid])
        ]
        children = [
            uid
            for uid in uids_by_resource.get(rule.child_resource, [])
            if any(s.resource == rule.child_resource for s in by_uid[uid])
        ]
        if rule.kind is RuleKind.OWNER:
            parent_set = set(parents)
            for child_uid in children:
                referenced = {
                    ref.uid
                    for snap in by_uid[child_uid]
                    if snap.resource == rule.child_resource
                    for ref in snap.meta.owner_references
                }
                for parent_uid in referenced & parent_set:
                    if parent_uid != child_uid:
                        edges.add(ObjectEdge(parent_uid, child_uid, rule))
        elif rule.kind is RuleKind.NAME_PREFIX:
            parents_by_name: dict[str, set[str]] = {}
            for parent_uid in parents:
                for snap in by_uid[parent_uid]:
                    if snap.resource == rule.parent_resource:
                        parents_by_name.setdefault(snap.meta.name, set()).add(parent_uid)
            for child_uid in children:
                child_names = {
                    s.meta.name for s in by_uid[child_uid] if s.resource == rule.child_resource
                }
                for name in child_names:
                    # every "-" in the child name marks a candidate parent name
                    for i, ch in enumerate(name):
                        if ch != "-":
                            continue
                        for parent_uid in parents_by_name.get(name[:i], ()):
                            if parent_uid != child_uid:
                                edges.add(ObjectEdge(parent_uid, child_uid, rule))
        else:
            selectors: dict[str, tuple[dict, set[str]]] = {}
            for parent_uid in parents:
                for snap in by_uid[parent_uid]:
                    if snap.resource != rule.parent_resource:
                        continue
                    selector = read_field(snap, rule.selector_field or DEFAULT_SELECTOR_FIELD)
                    if not isinstance(selector, dict) or not selector:
                        continue
                    key = json.dumps(selector, sort_keys=True, default=str)
                    selectors.setdefault(key, (selector, set()))[1].add(parent_uid)
            label_maps: dict[frozenset, set[str]] = {}
            for child_uid in children:
                for snap in by_uid[child_uid]:
                    if snap.resource == rule.child_resource:
                        label_maps.setdefault(frozenset(snap.meta.labels.items()), set()).add(
                            child_uid
                        )
            for selector, parent_uids in selectors.values():
                for labels, child_uids in label_maps.items():
                    label_dict = dict(labels)
                    if all(label_dict.get(k) == v for k, v in selector.items()):
                        for parent_uid in parent_uids:
                            for child_uid in child_uids:
                                if parent_uid != child_uid:
                                    edges.add(ObjectEdge(parent_uid, child_uid, rule))
    return sorted(
        edges,
        key=lambda e: (
            e.rule.kind.value,
            e.rule.parent_resource,
            e.rule.child_resource,
            e.rule.selector_field or "",
            e.parent_uid,
            e.child_uid,
        ),
    )


def rule_from_mapping(raw: Any, where: str) -> DependencyRule:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: rule must be a mapping")
    unknown = set(raw) - {"kind", "parent", "child", "selectorField"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kind_raw = raw.get("kind")
    try:
        kind = RuleKind(kind_raw)
    except ValueError:
        valid = ", ".join(k.value for k in RuleKind)
        raise ConfigError(f"{where}: unknown kind {kind_raw!r} (expected one of: {valid})") from None
    for field_name in ("parent", "child"):
        if not isinstance(raw.get(field_name), str) or not raw[field_name]:
            raise ConfigError(f"{where}: {field_name} must be a non-empty string")
    selector_field = raw.get("selectorField")
    if selector_field is not None and kind is not RuleKind.LABEL:
        raise ConfigError(f"{where}: selectorField only applies to label rules")
    try:
        return DependencyRule(
            kind=kind,
            parent_resource=raw["parent"],
            child_resource=raw["child"],
            selector_field=selector_field,
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_rules(path: str | Path) -> list[DependencyRule]:
    """Load a dependency config file: a YAML list of {kind, parent, child}."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if isinstance(raw, dict) and "rules" in raw:
        raw = raw["rules"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: expected a non-empty list of rules")
    return [rule_from_mapping(item, f"{path}: rule {i}") for i, item in enumerate(raw)]


def default_rules() -> list[DependencyRule]:
    """The rules covering the emulator's builtin controllers."""
    return [
        DependencyRule(RuleKind.OWNER, "deployments", "replicasets"),
        DependencyRule(RuleKind.OWNER, "replicasets", "pods"),
        DependencyRule(RuleKind.LABEL, "services", "pods"),
    ]
