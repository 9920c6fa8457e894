"""Exception types shared across the harness."""

from __future__ import annotations


class OpforgeError(Exception):
    """Base class for all harness errors."""


# -- catalog ---------------------------------------------------------------


class ParseError(OpforgeError):
    """A structured input document (catalog, lint config, script) is malformed."""


class DuplicateOperator(OpforgeError):
    """Two catalog entries share a name."""


class DanglingReference(OpforgeError):
    """A docstring reference points at an operator that is not in the catalog."""


class CycleDetected(OpforgeError):
    """Docstring references form a cycle (self-reference included)."""


# -- linter ----------------------------------------------------------------


class UnknownRule(OpforgeError):
    """A lint config document names a rule this linter does not implement."""


class CandidateSyntaxError(OpforgeError):
    """Candidate source failed to parse, or used an unsupported construct."""

    def __init__(self, message: str, line: int = 1):
        super().__init__(message)
        self.line = line


# -- prompt factory --------------------------------------------------------


class MissingDocstring(OpforgeError):
    """The operator has no resolvable docstring to prompt with."""


class NoCodeBlock(OpforgeError):
    """An LLM response contained no fenced code block."""


class MultipleModules(OpforgeError):
    """Strict parsing found more than one fenced code block."""


class PayloadKindMismatch(OpforgeError):
    """A feedback payload does not match the requested feedback kind."""


# -- gateway ---------------------------------------------------------------


class TransportError(OpforgeError):
    """Retryable transport failure talking to the inference service."""


class RateLimited(TransportError):
    """The inference service asked us to back off."""


class BadResponse(OpforgeError):
    """The inference service answered, but not with usable content."""


class ScriptExhausted(OpforgeError):
    """A scripted mock LLM ran out of canned responses."""


class SaturationSignal(OpforgeError):
    """A completion was requested on a saturated dialog session."""


# -- protocol / workers ----------------------------------------------------


class FrameTooLarge(OpforgeError):
    """A protocol frame exceeds the 64 MiB limit."""


class MalformedFrame(OpforgeError):
    """Bytes on the wire do not decode into a protocol message."""


class VersionMismatch(OpforgeError):
    """A frame carried an unsupported protocol version."""


class WorkerLost(OpforgeError):
    """The leased worker died or stopped answering mid-exchange."""


class PoolExhausted(OpforgeError):
    """No worker became available within the lease timeout."""


class WorkerSpawnFailed(OpforgeError):
    """A worker process could not be started (or restarted under the cap)."""


# -- reporting -------------------------------------------------------------


class CatalogMismatch(OpforgeError):
    """Reports being aggregated were produced against different catalogs."""
