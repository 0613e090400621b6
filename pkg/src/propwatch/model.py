"""Core domain types: objects, change events, and the log line codec.

Instants are integers (nanoseconds since the Unix epoch) everywhere in
memory and RFC 3339 strings with nanosecond precision on the wire, so
sub-millisecond propagation deltas survive a round trip through a log
file.
"""

from __future__ import annotations

import calendar
import json
import time as _time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

from .errors import MalformedEntry

__all__ = [
    "Op",
    "OwnerRef",
    "ObjectMeta",
    "ApiObject",
    "WatchEvent",
    "LogEntry",
    "new_object",
    "serialize_entry",
    "parse_entry",
    "format_time_ns",
    "parse_time_ns",
]


class Op(Enum):
    """Kind of change carried by an event."""

    ADD = "Add"
    UPDATE = "Update"
    DELETE = "Delete"


@dataclass(frozen=True)
class OwnerRef:
    """Reference from a dependent object to the object that manages it."""

    resource: str
    name: str
    uid: str


@dataclass(frozen=True)
class ObjectMeta:
    name: str
    namespace: str = "default"
    uid: str = ""
    resource_version: int = 0
    labels: Mapping[str, str] = field(default_factory=dict)
    owner_references: tuple[OwnerRef, ...] = ()
    creation_time_ns: int = 0


@dataclass(frozen=True)
class ApiObject:
    """One versioned object: identity plus opaque spec/status maps.

    spec and status are deliberately schema-free so any resource,
    including ones registered later, can be stored and logged without
    per-resource code.
    """

    resource: str
    meta: ObjectMeta
    spec: Mapping[str, Any] = field(default_factory=dict)
    status: Mapping[str, Any] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.resource, self.meta.namespace, self.meta.name)


@dataclass(frozen=True)
class WatchEvent:
    """A change notification with a receipt timestamp.

    old_obj is present exactly when op is Update and then refers to the
    same uid as obj.
    """

    time_ns: int
    op: Op
    obj: ApiObject
    old_obj: ApiObject | None = None

    def __post_init__(self) -> None:
        if self.op is Op.UPDATE:
            if self.old_obj is None:
                raise ValueError("Update event requires old_obj")
            if self.old_obj.meta.uid != self.obj.meta.uid:
                raise ValueError("old_obj uid differs from obj uid")
        elif self.old_obj is not None:
            raise ValueError(f"{self.op.value} event must not carry old_obj")


# A log entry is an event as written to / read from a log file.
LogEntry = WatchEvent


def new_object(
    resource: str,
    name: str,
    namespace: str = "default",
    labels: Mapping[str, str] | None = None,
    owner_references: tuple[OwnerRef, ...] = (),
    spec: Mapping[str, Any] | None = None,
    status: Mapping[str, Any] | None = None,
) -> ApiObject:
    """Build an object template; the store stamps uid/version/creation time."""
    meta = ObjectMeta(
        name=name,
        namespace=namespace,
        labels=dict(labels or {}),
        owner_references=owner_references,
    )
    return ApiObject(resource=resource, meta=meta, spec=dict(spec or {}), status=dict(status or {}))


def with_spec(obj: ApiObject, **spec_updates: Any) -> ApiObject:
    """Copy of obj with the given spec keys replaced."""
    spec = dict(obj.spec)
    spec.update(spec_updates)
    return replace(obj, spec=spec)


def with_status(obj: ApiObject, **status_updates: Any) -> ApiObject:
    status = dict(obj.status)
    status.update(status_updates)
    return replace(obj, status=status)


# ---------------------------------------------------------------------------
# Time codec: RFC 3339 with exactly nine fractional digits, UTC only.

_TIME_FMT = "%Y-%m-%dT%H:%M:%S"


def format_time_ns(t_ns: int) -> str:
    secs, nanos = divmod(t_ns, 1_000_000_000)
    tm = _time.gmtime(secs)
    return f"{_time.strftime(_TIME_FMT, tm)}.{nanos:09d}Z"


def parse_time_ns(text: str) -> int:
    if not isinstance(text, str) or not text.endswith("Z") or "." not in text:
        raise MalformedEntry(f"bad timestamp {text!r}")
    base, _, frac = text[:-1].partition(".")
    if len(frac) != 9 or not frac.isdigit():
        raise MalformedEntry(f"timestamp needs nine fractional digits: {text!r}")
    try:
        tm = _time.strptime(base, _TIME_FMT)
    except ValueError as exc:
        raise MalformedEntry(f"bad timestamp {text!r}: {exc}") from None
    return calendar.timegm(tm) * 1_000_000_000 + int(frac)


# ---------------------------------------------------------------------------
# Log line codec. One JSON object per line, UTF-8, keys sorted so equal
# entries always serialize to identical bytes.

def _obj_to_wire(obj: ApiObject) -> dict[str, Any]:
    meta: dict[str, Any] = {
        "name": obj.meta.name,
        "namespace": obj.meta.namespace,
        "uid": obj.meta.uid,
        "resourceVersion": obj.meta.resource_version,
        "creationTime": format_time_ns(obj.meta.creation_time_ns),
    }
    if obj.meta.labels:
        meta["labels"] = dict(obj.meta.labels)
    if obj.meta.owner_references:
        meta["ownerReferences"] = [
            {"resource": r.resource, "name": r.name, "uid": r.uid}
            for r in obj.meta.owner_references
        ]
    wire: dict[str, Any] = {"resource": obj.resource, "meta": meta}
    if obj.spec:
        wire["spec"] = obj.spec
    if obj.status:
        wire["status"] = obj.status
    return wire


def serialize_entry(entry: LogEntry) -> bytes:
    """Encode one entry as a newline-terminated log line.

    Empty optional fields are omitted entirely; equal entries produce
    bit-identical lines.
    """
    wire: dict[str, Any] = {
        "Time": format_time_ns(entry.time_ns),
        "Op": entry.op.value,
        "Obj": _obj_to_wire(entry.obj),
    }
    if entry.old_obj is not None:
        wire["OldObj"] = _obj_to_wire(entry.old_obj)
    line = json.dumps(wire, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return line.encode("utf-8") + b"\n"


def _expect_str(value: Any, what: str) -> str:
    if not isinstance(value, str):
        raise MalformedEntry(f"{what} must be a string, got {type(value).__name__}")
    return value


def _obj_from_wire(wire: Any, what: str) -> ApiObject:
    if not isinstance(wire, dict):
        raise MalformedEntry(f"{what} must be an object")
    unknown = set(wire) - {"resource", "meta", "spec", "status"}
    if unknown:
        raise MalformedEntry(f"{what} has unknown keys {sorted(unknown)}")
    if "resource" not in wire or "meta" not in wire:
        raise MalformedEntry(f"{what} missing resource or meta")
    meta = wire["meta"]
    if not isinstance(meta, dict):
        raise MalformedEntry(f"{what}.meta must be an object")
    unknown = set(meta) - {
        "name",
        "namespace",
        "uid",
        "resourceVersion",
        "labels",
        "ownerReferences",
        "creationTime",
    }
    if unknown:
        raise MalformedEntry(f"{what}.meta has unknown keys {sorted(unknown)}")
    for required in ("name", "namespace", "uid", "resourceVersion", "creationTime"):
        if required not in meta:
            raise MalformedEntry(f"{what}.meta missing {required}")
    version = meta["resourceVersion"]
    if isinstance(version, bool) or not isinstance(version, int) or version < 0:
        raise MalformedEntry(f"{what}.meta.resourceVersion must be a non-negative integer")
    labels_raw = meta.get("labels", {})
    if not isinstance(labels_raw, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in labels_raw.items()
    ):
        raise MalformedEntry(f"{what}.meta.labels must map strings to strings")
    refs_raw = meta.get("ownerReferences", [])
    if not isinstance(refs_raw, list):
        raise MalformedEntry(f"{what}.meta.ownerReferences must be a list")
    refs = []
    for ref in refs_raw:
        if not isinstance(ref, dict) or set(ref) != {"resource", "name", "uid"}:
            raise MalformedEntry(f"{what}.meta.ownerReferences entries need resource/name/uid")
        refs.append(
            OwnerRef(
                resource=_expect_str(ref["resource"], "ownerReference.resource"),
                name=_expect_str(ref["name"], "ownerReference.name"),
                uid=_expect_str(ref["uid"], "ownerReference.uid"),
            )
        )
    for opt in ("spec", "status"):
        if opt in wire and not isinstance(wire[opt], dict):
            raise MalformedEntry(f"{what}.{opt} must be an object")
    return ApiObject(
        resource=_expect_str(wire["resource"], f"{what}.resource"),
        meta=ObjectMeta(
            name=_expect_str(meta["name"], f"{what}.meta.name"),
            namespace=_expect_str(meta["namespace"], f"{what}.meta.namespace"),
            uid=_expect_str(meta["uid"], f"{what}.meta.uid"),
            resource_version=version,
            labels=labels_raw,
            owner_references=tuple(refs),
            creation_time_ns=parse_time_ns(meta["creationTime"]),
        ),
        spec=wire.get("spec", {}),
        status=wire.get("status", {}),
    )


def parse_entry(line: bytes | str) -> LogEntry:
    """Decode one log line; raises MalformedEntry on anything non-conforming."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedEntry(f"not UTF-8: {exc}") from None
    try:
        wire = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedEntry(f"bad syntax: {exc}") from None
    if not isinstance(wire, dict):
        raise MalformedEntry("entry must be a JSON object")
    unknown = set(wire) - {"Time", "Op", "Obj", "OldObj"}
    if unknown:
        raise MalformedEntry(f"unknown keys {sorted(unknown)}")
    for required in ("Time", "Op", "Obj"):
        if required not in wire:
            raise MalformedEntry(f"missing required field {required}")
    try:
        op = Op(wire["Op"])
    except ValueError:
        raise MalformedEntry(f"unknown Op value {wire['Op']!r}") from None
    time_ns = parse_time_ns(_expect_str(wire["Time"], "Time"))
    obj = _obj_from_wire(wire["Obj"], "Obj")
    old_obj = _obj_from_wire(wire["OldObj"], "OldObj") if "OldObj" in wire else None
    try:
        return WatchEvent(time_ns=time_ns, op=op, obj=obj, old_obj=old_obj)
    except ValueError as exc:
        raise MalformedEntry(str(exc)) from None
