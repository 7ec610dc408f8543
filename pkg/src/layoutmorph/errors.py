"""Exception types shared across the toolkit."""


class LayoutMorphError(Exception):
    """Base class for all toolkit errors."""


class EmptyMask(LayoutMorphError):
    """A binary mask that was required to be non-empty has no set bits."""


class ShapeError(LayoutMorphError):
    """Array dimensions do not match between related rasters/masks."""


class PaletteMismatch(LayoutMorphError):
    """A color or label index is not covered by the active palette."""


class BackendError(LayoutMorphError):
    """A backend call failed (transport or server-side). Not retryable."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class Throttled(BackendError):
    """Backend signalled rate limiting (HTTP 429). Retryable."""


class UnknownTarget(LayoutMorphError):
    """An instance id was referenced that is not in the target set."""


class ExtractionFailed(LayoutMorphError):
    """A single-object mask could not be recovered after all retries."""

    def __init__(self, instance_id, message=None):
        super().__init__(message or f"mask extraction failed for {instance_id!r}")
        self.instance_id = instance_id


class ConstraintViolation(LayoutMorphError):
    """A transform parameter violates its admissible range."""


class NoLegalMove(LayoutMorphError):
    """No non-trivial translation exists for the object on this canvas."""


class DegenerateTransform(LayoutMorphError):
    """A transform produced an empty (fully clipped) mask."""


class EditExhausted(LayoutMorphError):
    """The edit loop could not complete its step budget within the retry limit."""


class MissingCandidates(LayoutMorphError):
    """Ground-truth caption parsing requires a candidate set."""


class CorpusError(LayoutMorphError):
    """The input corpus is malformed or internally inconsistent."""


class CaseFailure(LayoutMorphError):
    """Evaluating a test case failed; carries the case id for triage."""

    def __init__(self, case_id, message):
        super().__init__(f"case {case_id}: {message}")
        self.case_id = case_id
