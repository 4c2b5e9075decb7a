"""Exception hierarchy shared across the package.

CLI exit codes: contract/config/format problems map to 1, numeric
failures (non-finite values, failed gradient checks) map to 2.
"""


class SltError(Exception):
    """Base class for all package errors."""


class ConfigError(SltError):
    """Invalid configuration: bad switch combination, geometry, or schema."""


class ContractError(SltError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Tensor operands with incompatible shapes; message names both."""


class VocabularyError(ContractError):
    """Token id outside the configured vocabulary."""


class FormatError(SltError):
    """Malformed on-disk artifact (sample file, manifest, checkpoint)."""


class InfeasibleAlignmentError(ContractError):
    """CTC target cannot be aligned to the given number of frames."""


class NumericError(SltError):
    """Non-finite loss or gradient, or a failed numeric verification."""


class HarnessError(SltError):
    """The verification harness itself detected an inconsistency."""
