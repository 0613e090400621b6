"""Exception types shared across the toolkit."""


class PropwatchError(Exception):
    """Base class for all errors raised by this package."""


class MalformedEntry(PropwatchError):
    """A log line could not be parsed into a valid entry."""


class AlreadyExists(PropwatchError):
    """A live object with the same (resource, namespace, name) exists."""


class NotFound(PropwatchError):
    """No live object matches the given identity."""


class StaleWrite(PropwatchError):
    """Optimistic-concurrency failure: base resourceVersion is no longer current."""


class WrongClockMode(PropwatchError):
    """Operation requires a virtual clock."""


class UnknownResource(PropwatchError):
    """Resource name is not registered with the store."""


class OutputUnwritable(PropwatchError):
    """An output file could not be opened or written."""


class SelectorMissing(PropwatchError):
    """A label rule's selector field is absent from the parent object."""


class ParentEventMissing(PropwatchError):
    """No log entry of the requested op exists for the parent object."""


class ConvergenceTimeout(PropwatchError):
    """A scenario's convergence condition was not met within its deadline."""


class UnknownScenario(PropwatchError):
    """No builtin scenario with the given name."""


class BadParams(PropwatchError):
    """Scenario parameters are missing or have the wrong type."""


class ConfigError(PropwatchError):
    """A configuration file or value is invalid."""
