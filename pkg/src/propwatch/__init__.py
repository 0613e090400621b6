"""propwatch: measure change-propagation times between dependent resources
in an emulated Kubernetes-style control plane.

An embedded emulator (store + reconciliation controllers) generates
realistic cascading changes, an agent logs every change with receipt
timestamps, and an aggregator correlates the logs along dependency rules
to quantify how long changes take to propagate.
"""

from .aggregator import (
    CompletionReport,
    CorrelationResult,
    Histogram,
    MatchMode,
    PropagationRecord,
    completion,
    correlate,
    histogram,
)
from .agent import Agent, AgentConfig, AgentMetrics, Batched, PerEntry, start_agent
from .controllers import (
    ControllerConfig,
    SlowStartBatch,
    TokenBucket,
    install_controllers,
)
from .deps import DependencyRule, ObjectEdge, RuleKind, matches_rule, resolve_edges
from .emustore import Clock, EventStream, Store
from .model import (
    ApiObject,
    LogEntry,
    ObjectMeta,
    Op,
    OwnerRef,
    WatchEvent,
    new_object,
    parse_entry,
    serialize_entry,
)
from .runner import (
    LiveCount,
    Quiescence,
    RunResult,
    Scenario,
    builtin_scenario,
    run_from_snapshot,
    run_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AgentConfig",
    "AgentMetrics",
    "ApiObject",
    "Batched",
    "Clock",
    "CompletionReport",
    "ControllerConfig",
    "CorrelationResult",
    "DependencyRule",
    "EventStream",
    "Histogram",
    "LiveCount",
    "LogEntry",
    "MatchMode",
    "ObjectEdge",
    "ObjectMeta",
    "Op",
    "OwnerRef",
    "PerEntry",
    "PropagationRecord",
    "Quiescence",
    "RuleKind",
    "RunResult",
    "Scenario",
    "SlowStartBatch",
    "Store",
    "TokenBucket",
    "WatchEvent",
    "builtin_scenario",
    "completion",
    "correlate",
    "histogram",
    "install_controllers",
    "matches_rule",
    "new_object",
    "parse_entry",
    "resolve_edges",
    "run_from_snapshot",
    "run_scenario",
    "serialize_entry",
    "start_agent",
]
