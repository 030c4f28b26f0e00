"""Exception types raised across the auditor pipeline."""


class LeakAuditError(Exception):
    """Base class for all auditor errors."""


# --- manifest / decoding ---------------------------------------------------

class MalformedManifestError(LeakAuditError):
    """Manifest file cannot be parsed."""


class InvalidLabelError(MalformedManifestError):
    """Manifest label outside {0, 1}."""


class DuplicatePathError(MalformedManifestError):
    """Same audio path listed twice."""


class EmptyClassError(MalformedManifestError):
    """One of the two classes has no entries."""


class UnsupportedFormatError(LeakAuditError):
    """Audio container or codec outside the supported set."""


class CorruptFileError(LeakAuditError):
    """Audio file is structurally broken."""


class InvalidRateError(LeakAuditError):
    """Sample rate must be positive."""


# --- signal processing -----------------------------------------------------

class TooShortError(LeakAuditError):
    """Signal shorter than one analysis window."""


class RateMismatchError(LeakAuditError):
    """Operands were produced at different sample rates."""


class BandAboveNyquistError(LeakAuditError):
    """Requested analysis band exceeds the Nyquist frequency."""


# --- regions / annotations -------------------------------------------------

class OutOfBoundsError(LeakAuditError):
    """Interval outside the recording bounds."""


class MissingAnnotationError(LeakAuditError):
    """Manual segmentation requested but no annotation file given."""


class MissingSpeakerLabelsError(LeakAuditError):
    """Participant-only mode needs speaker-labeled annotations."""


class EmptyRegionsError(LeakAuditError):
    """No usable interval remained after filtering."""


# --- features / interchange ------------------------------------------------

class TooFewFramesError(LeakAuditError):
    """Operation requires at least two feature frames."""


class FormatMismatchError(LeakAuditError):
    """Embedding interchange file malformed or wrong version."""


class RegionFingerprintMismatchError(FormatMismatchError):
    """Embeddings were computed for a different segmentation."""


# --- classifier ------------------------------------------------------------

class DimMismatchError(LeakAuditError):
    """Feature dimension incompatible with model parameters."""


class DegenerateSplitError(LeakAuditError):
    """Training subset is missing one of the classes."""


class NoChunksError(LeakAuditError):
    """Scoring requires at least one chunk."""


# --- audit -----------------------------------------------------------------

class TooFewSamplesError(LeakAuditError):
    """Not enough samples per class for the requested fold count."""


class SingleClassError(LeakAuditError):
    """AUC needs scores from both classes."""


class InvalidPermutationCountError(LeakAuditError):
    """Permutation test needs at least one permutation."""


class EmptyError(LeakAuditError):
    """Statistics of an empty value list."""
