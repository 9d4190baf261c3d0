"""Exception types shared across the pipeline.

Every error that can reach a user is a subclass of :class:`PcfKitError`,
so the CLI can map failures onto exit codes without string matching.
"""

from __future__ import annotations


class PcfKitError(Exception):
    """Base class for all errors raised by this package."""


# --- configuration / user input -------------------------------------------

class ConfigInvalid(PcfKitError):
    """A run configuration failed validation before any work started."""


class FileUnreadable(PcfKitError):
    """An input file is missing, unreadable, or structurally broken."""


class RunNotFound(PcfKitError):
    """No run record exists at the requested id or directory."""


class ReferenceUnreadable(PcfKitError):
    """A reference inventory document could not be loaded."""


# --- unit algebra -----------------------------------------------------------

class IncompatibleUnits(PcfKitError):
    """Requested a conversion between units with no defined factor."""


# --- prompting --------------------------------------------------------------

class TemplateError(PcfKitError):
    """A prompt template asset is malformed or failed its checksum."""


class UnknownProcess(PcfKitError):
    """current_process is not a member of the supplied process list."""


# --- gateway ----------------------------------------------------------------

class ProviderError(PcfKitError):
    """Base class for completion-provider failures."""


class TransientProviderError(ProviderError):
    """Retryable failure (timeout, 5xx, 429). Internal to the gateway."""


class ProviderUnavailable(ProviderError):
    """Provider could not serve the request after retries (or fixture miss)."""


class MalformedProviderResponse(ProviderError):
    """The wire envelope could not be decoded (distinct from bad JSON content)."""


class TranscriptNotFound(PcfKitError):
    """No transcript stored for the requested trial."""


class HashMismatch(PcfKitError):
    """Stored transcript content does not match its integrity hash."""


# --- parsing ----------------------------------------------------------------

class ParseError(PcfKitError):
    """Base class for response-parsing failures."""


class UnparseableResponse(ParseError):
    """No JSON value of the expected shape could be extracted after repairs."""


class SchemaViolation(ParseError):
    """Extracted JSON violates the inventory schema.

    Carries per-item diagnostics in ``.diagnostics`` (list of
    :class:`pcfkit.diagnostics.Diagnostic`).
    """

    def __init__(self, message: str, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class EmptyModel(PcfKitError):
    """No process parsed successfully; there is nothing to assemble."""


class ModelDeclined(PcfKitError):
    """The model answered its documented "None" escape instead of a list."""


# --- factor matching --------------------------------------------------------

class ZeroNormVector(PcfKitError):
    """An embedding with zero Euclidean norm reached cosine similarity."""


class EmbeddingUnavailable(PcfKitError):
    """The embedding provider has no vector for the requested name."""


# --- indirect estimation ----------------------------------------------------

class NoIndustryMatch(PcfKitError):
    """An activity name matched no industry above the threshold."""


class DivisionByZeroUnitValue(PcfKitError):
    """Unit value v_j is zero; the raw-material coefficient is undefined."""


class DivisionByZeroProduction(PcfKitError):
    """Total production value V_i is zero; per-unit coefficients are undefined."""


class MissingDistance(PcfKitError):
    """A source region with positive probability has no distance entry."""


# --- evaluation -------------------------------------------------------------

class ZeroExpertReference(PcfKitError):
    """Expert PCF reference is zero or negative; the error ratio is undefined."""


class InsufficientSamples(PcfKitError):
    """Fewer than two samples available for dispersion statistics."""


class DegenerateMean(PcfKitError):
    """Filtered sample mean is zero; the coefficient of variation is undefined."""


# --- orchestration ----------------------------------------------------------

class DriftDetected(PcfKitError):
    """Replay produced results that differ from the stored ones.

    ``.diff`` holds a structured description of the first divergence.
    """

    def __init__(self, message: str, diff=None):
        super().__init__(message)
        self.diff = diff


class StageError(PcfKitError):
    """A pipeline stage failed; names the stage so users can locate it.

    ``.stage`` is one of: config, process-breakdown, inventory,
    activity-estimation, factor-matching, emission-calculation,
    evaluation, persistence, replay.
    """

    def __init__(self, stage: str, message: str, cause: Exception | None = None):
        super().__init__(f"[stage: {stage}] {message}")
        self.stage = stage
        self.cause = cause
