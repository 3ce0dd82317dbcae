"""Exception types raised across the pipeline.

Every error the CLI can surface derives from RslicerError so subcommands can
map any failure to a single-line ``error: <Type>: <detail>`` message.
"""


class RslicerError(Exception):
    """Base class for all pipeline errors."""


# --- telemetry parsing / windowing ---

class MalformedRow(RslicerError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}" if detail else f"line {line_no}")


class NonFiniteValue(RslicerError):
    def __init__(self, line_no: int):
        self.line_no = line_no
        super().__init__(f"line {line_no}: non-finite metric value")


class MalformedLine(RslicerError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}" if detail else f"line {line_no}")


class DuplicateSpan(RslicerError):
    def __init__(self, trace_id: str, span_id: str):
        self.trace_id = trace_id
        self.span_id = span_id
        super().__init__(f"duplicate span ({trace_id}, {span_id})")


class UnknownLevel(RslicerError):
    def __init__(self, line_no: int, level: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: unknown log level {level!r}")


class InvalidWindowing(RslicerError):
    pass


# --- synthetic scenario generation ---

class InvalidScenario(RslicerError):
    pass


# --- embedding backbones ---

class RemoteUnavailable(RslicerError):
    pass


class RemoteDimensionMismatch(RslicerError):
    pass


class EmptyTextEmbedding(RslicerError):
    pass


# --- fusion / training ---

class ZeroVector(RslicerError):
    pass


class DegenerateProjection(RslicerError):
    pass


class DegenerateFusion(RslicerError):
    pass


class NonFiniteLoss(RslicerError):
    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


# --- state partitioning ---

class InsufficientData(RslicerError):
    pass


class DimensionMismatch(RslicerError):
    pass


class DegeneratePartition(RslicerError):
    pass


# --- state-conditioned tasks ---

class NoNormalData(RslicerError):
    pass


class ComponentAbsent(RslicerError):
    pass


class NoPrototypes(RslicerError):
    pass


class PartitionMismatch(RslicerError):
    pass


# --- evaluation / artifacts / config ---

class LengthMismatch(RslicerError):
    pass


class NoPositives(RslicerError):
    pass


class EmptyInput(RslicerError):
    pass


class DegenerateVariance(RslicerError):
    pass


class BadArtifact(RslicerError):
    pass


class BadConfig(RslicerError):
    pass
