"""Error taxonomy and process exit codes shared across the simulator."""


class FraglabError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(FraglabError):
    """A config is malformed: bad band partition, bad policy name, bad sizes."""


class InfeasibleSpecError(ConfigurationError):
    """The workload cannot fit on the volume at all.

    Carries the shortfall so the harness can report required vs available.
    """

    def __init__(self, message, required_clusters=None, available_clusters=None):
        super().__init__(message)
        self.required_clusters = required_clusters
        self.available_clusters = available_clusters


class NoSpaceError(FraglabError):
    """An allocation could not be satisfied from the current free space."""

    def __init__(self, message, requested=None, available=None):
        super().__init__(message)
        self.requested = requested
        self.available = available


class UsageError(FraglabError):
    """The caller violated an operation precondition (duplicate id, bad size)."""


class NotFoundError(UsageError):
    """The object id is not live."""


class UndefinedAgeError(FraglabError):
    """Storage age is undefined because no bytes are live."""


class InvariantViolationError(FraglabError):
    """Internal simulator state is inconsistent; the run must abort."""


class CorruptionError(InvariantViolationError):
    """The marker scan found an inconsistent layout (gap, duplicate, orphan)."""

    def __init__(self, message, cluster=None):
        super().__init__(message)
        self.cluster = cluster


class SimulatedAbortError(FraglabError):
    """Raised by a fault-injection hook to abort a safe write mid-protocol."""


# CLI exit codes. 1 is reserved for unexpected failures.
EXIT_OK = 0
EXIT_CONFIG = 2       # invalid or infeasible config
EXIT_NO_SPACE = 3     # the volume ran out of space mid-experiment
EXIT_INVARIANT = 4    # internal inconsistency or scan corruption
