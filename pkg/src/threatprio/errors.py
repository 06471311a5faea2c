"""Exception hierarchy shared across the pipeline stages."""


class ThreatPrioError(Exception):
    """Base class for every error raised by this package."""


# -- vector format -----------------------------------------------------------

class VectorError(ThreatPrioError, ValueError):
    pass


class MalformedVector(VectorError):
    pass


class MissingMetric(VectorError):
    pass


class DuplicateMetric(VectorError):
    pass


class OutOfRange(ThreatPrioError, ValueError):
    pass


# -- gateway -----------------------------------------------------------------

class GatewayError(ThreatPrioError):
    pass


class UnboundPlaceholder(GatewayError, KeyError):
    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class BackendUnavailable(GatewayError):
    pass


class FixtureMiss(BackendUnavailable):
    """The stub backend has no recorded response for a prompt digest."""

    def __init__(self, digest: str, template_id: str = ""):
        super().__init__(f"no fixture for prompt digest {digest} (template {template_id or '?'})")
        self.digest = digest
        self.template_id = template_id


class SchemaViolation(GatewayError):
    def __init__(self, message: str, errors: list[str] | None = None, raw: str = ""):
        super().__init__(message)
        self.errors = errors or []
        self.raw = raw


class RateLimited(GatewayError):
    def __init__(self, retry_after: float = 1.0):
        super().__init__(f"rate limited, retry after {retry_after}s")
        self.retry_after = retry_after


class GatewayFailure(ThreatPrioError):
    """A pipeline stage could not obtain a usable gateway answer."""


# -- knowledge store ---------------------------------------------------------

class KnowledgeError(ThreatPrioError):
    pass


class MalformedId(KnowledgeError, ValueError):
    pass


class SourceUnavailable(KnowledgeError):
    pass


class NoSnapshotLoaded(KnowledgeError):
    pass


# -- mitigation / evaluation / cli ------------------------------------------

class CyclicDependency(ThreatPrioError):
    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class LengthMismatch(ThreatPrioError, ValueError):
    pass


class IdMismatch(ThreatPrioError, ValueError):
    pass


class TooShort(ThreatPrioError, ValueError):
    pass


class InvalidParams(ThreatPrioError, ValueError):
    pass


class ConfigError(ThreatPrioError):
    pass


class StageFailure(ThreatPrioError):
    def __init__(self, stage: str, instance_ids: list[str], message: str = ""):
        ids = ", ".join(instance_ids) if instance_ids else "-"
        super().__init__(f"stage {stage} failed for [{ids}]: {message}")
        self.stage = stage
        self.instance_ids = instance_ids
