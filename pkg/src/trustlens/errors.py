"""Exception taxonomy shared by the library and the CLI.

The CLI maps these onto exit codes: schema/format problems exit 3,
numeric failures exit 4 (argparse itself exits 2 on bad arguments).
"""


class TrustlensError(Exception):
    """Base class for all package-specific failures."""


class SchemaError(TrustlensError):
    """An artifact violates its documented schema or a type invariant."""


class LayoutError(SchemaError):
    """Token bookkeeping failure: out-of-range indices or mismatched dims."""


class FormatError(SchemaError):
    """A serialized artifact cannot be parsed."""


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File carries an unsupported format version."""


class DimensionError(FormatError):
    """Header dimensions disagree with the payload size."""


class PayloadError(FormatError):
    """Payload contains non-finite or out-of-domain values."""


class NumericError(TrustlensError):
    """A numeric operation has no defined result on the given input."""


class EmptySelectionError(NumericError):
    """Saliency fusion requested on a stack with no surviving queries."""


class ZeroMassError(NumericError):
    """Sensor contribution requested on attention with zero total mass."""


class AllMaskedError(NumericError):
    """Detector invoked with every sensor modality masked."""


class DegenerateFitError(NumericError):
    """Calibration fit attempted on degenerate data (e.g. one-class labels)."""
