"""Exception hierarchy.

Every pipeline error carries the process exit code the CLI maps it to:
1 for user/config problems, 2 for data problems, 3 for backend exhaustion.
"""


class PipelineError(Exception):
    exit_code = 2


class ConfigError(PipelineError):
    exit_code = 1


class IoError(PipelineError):
    exit_code = 1

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class PartialPackPrevented(IoError):
    pass


class DataError(PipelineError):
    exit_code = 2


class IngestError(DataError):
    """Raised with every problem found in a file, not just the first."""

    def __init__(self, problems, source="<stream>"):
        self.problems = list(problems)
        self.source = source
        lines = "; ".join(f"line {n}: {msg}" for n, msg in self.problems[:10])
        more = len(self.problems) - 10
        if more > 0:
            lines += f"; ... {more} more"
        super().__init__(f"{source}: {lines}")


class MissingColumn(DataError):
    pass


class MalformedRow(IngestError):
    pass


class OutOfRangeValue(IngestError):
    pass


class InconsistentTask(DataError):
    pass


class DuplicateTask(DataError):
    pass


class UnmappedOccupation(DataError):
    pass


class EmptyTask(DataError):
    pass


class UnknownKey(DataError):
    pass


class EmptyOccupation(DataError):
    pass


class EmptyGroup(DataError):
    pass


class OutOfRangeP(DataError):
    pass


class CacheCorrupt(DataError):
    def __init__(self, path, line_no, key, reason):
        super().__init__(f"{path}: line {line_no} (task_key={key}): {reason}")
        self.key = key
        self.line_no = line_no


class MissingStageInput(DataError):
    pass


class ScriptExhausted(Exception):
    """The mock backend ran out of scripted responses."""


class BackendError(PipelineError):
    exit_code = 3


class TransportError(BackendError):
    """Network failure, timeout or retryable HTTP status."""


class DegenerateSample(UserWarning):
    """All pooled values are identical; the rank test carries no information."""
