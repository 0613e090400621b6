"""Log entry codec: round trips, determinism, and malformed-line rejection."""

import json
import random

import pytest

from propwatch.errors import MalformedEntry
from propwatch.model import (
    LogEntry,
    Op,
    format_time_ns,
    parse_entry,
    parse_time_ns,
    serialize_entry,
)

from helpers import make_obj, random_entries


def entry(op=Op.ADD, t=5_000_000_000, old=None, **obj_kwargs):
    defaults = dict(resource="pods", name="p1", uid="u-1", version=3)
    defaults.update(obj_kwargs)
    return LogEntry(time_ns=t, op=op, obj=make_obj(**defaults), old_obj=old)


class TestTimeCodec:
    def test_round_trip_nanoseconds(self):
        for t in [0, 1, 999_999_999, 1_700_000_000_123_456_789, 5_000_000_000]:
            assert parse_time_ns(format_time_ns(t)) == t

    def test_epoch_renders_rfc3339(self):
        assert format_time_ns(0) == "1970-01-01T00:00:00.000000000Z"

    def test_rejects_missing_fraction(self):
        with pytest.raises(MalformedEntry):
            parse_time_ns("2024-01-01T00:00:00Z")


class TestSerialize:
    def test_add_has_op_and_no_oldobj(self):
        line = serialize_entry(entry(op=Op.ADD)).decode()
        assert '"Op":"Add"' in line
        assert "OldObj" not in line
        assert line.endswith("\n")

    def test_update_carries_both_objects(self):
        old = make_obj("pods", "p1", "u-1", version=2, spec={"replicas": 2})
        new = make_obj("pods", "p1", "u-1", version=3, spec={"replicas": 3})
        line = serialize_entry(LogEntry(1, Op.UPDATE, new, old)).decode()
        assert '"Obj"' in line and '"OldObj"' in line

    def test_wire_field_names_exact(self):
        wire = json.loads(serialize_entry(entry()))
        assert set(wire) == {"Time", "Op", "Obj"}
        assert set(wire["Obj"]) <= {"resource", "meta", "spec", "status"}
        assert {"name", "namespace", "uid", "resourceVersion", "creationTime"} <= set(
            wire["Obj"]["meta"]
        )

    def test_label_order_does_not_change_bytes(self):
        a = entry(labels={"a": "1", "b": "2"})
        b = entry(labels={"b": "2", "a": "1"})
        assert a == b
        assert serialize_entry(a) == serialize_entry(b)

    def test_empty_optionals_omitted(self):
        wire = json.loads(serialize_entry(entry(labels={}, spec={}, status={})))
        assert "labels" not in wire["Obj"]["meta"]
        assert "ownerReferences" not in wire["Obj"]["meta"]
        assert "spec" not in wire["Obj"]
        assert "status" not in wire["Obj"]

    def test_injective_on_field_changes(self):
        base = serialize_entry(entry())
        assert serialize_entry(entry(t=5_000_000_001)) != base
        assert serialize_entry(entry(op=Op.DELETE)) != base
        assert serialize_entry(entry(version=4)) != base
        assert serialize_entry(entry(labels={"x": "y"})) != base


class TestParse:
    def test_round_trip_identity(self):
        e = entry(labels={"app": "web"}, spec={"replicas": 3, "deep": {"a": [1, 2]}})
        assert parse_entry(serialize_entry(e)) == e

    def test_round_trip_100_random_entries(self):
        rng = random.Random(20240811)
        for e in random_entries(rng, 100):
            assert parse_entry(serialize_entry(e)) == e

    def test_unknown_op_rejected(self):
        line = serialize_entry(entry()).decode().replace('"Op":"Add"', '"Op":"Replace"')
        with pytest.raises(MalformedEntry):
            parse_entry(line)

    def test_truncated_line_rejected(self):
        line = serialize_entry(entry())
        with pytest.raises(MalformedEntry):
            parse_entry(line[: len(line) // 2])

    def test_missing_required_field_rejected(self):
        wire = json.loads(serialize_entry(entry()))
        del wire["Time"]
        with pytest.raises(MalformedEntry):
            parse_entry(json.dumps(wire))

    def test_oldobj_on_add_rejected(self):
        wire = json.loads(serialize_entry(entry()))
        wire["OldObj"] = wire["Obj"]
        with pytest.raises(MalformedEntry):
            parse_entry(json.dumps(wire))

    def test_update_without_oldobj_rejected(self):
        wire = json.loads(serialize_entry(entry()))
        wire["Op"] = "Update"
        with pytest.raises(MalformedEntry):
            parse_entry(json.dumps(wire))

    def test_update_uid_mismatch_rejected(self):
        old = make_obj("pods", "p1", "u-1", version=2)
        new = make_obj("pods", "p1", "u-1", version=3)
        wire = json.loads(serialize_entry(LogEntry(1, Op.UPDATE, new, old)))
        wire["OldObj"]["meta"]["uid"] = "u-other"
        with pytest.raises(MalformedEntry):
            parse_entry(json.dumps(wire))

    def test_unknown_keys_rejected(self):
        wire = json.loads(serialize_entry(entry()))
        wire["Extra"] = 1
        with pytest.raises(MalformedEntry):
            parse_entry(json.dumps(wire))

    def test_negative_version_rejected(self):
        wire = json.loads(serialize_entry(entry()))
        wire["Obj"]["meta"]["resourceVersion"] = -1
        with pytest.raises(MalformedEntry):
            parse_entry(json.dumps(wire))

    def test_not_json_rejected(self):
        with pytest.raises(MalformedEntry):
            parse_entry(b"not a log line\n")


class TestEventInvariants:
    def test_update_requires_oldobj(self):
        with pytest.raises(ValueError):
            LogEntry(1, Op.UPDATE, make_obj("pods", "p", "u"))

    def test_add_forbids_oldobj(self):
        with pytest.raises(ValueError):
            LogEntry(1, Op.ADD, make_obj("pods", "p", "u"), make_obj("pods", "p", "u"))

    def test_update_uid_must_match(self):
        with pytest.raises(ValueError):
            LogEntry(1, Op.UPDATE, make_obj("pods", "p", "u1"), make_obj("pods", "p", "u2"))
