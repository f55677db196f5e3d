"""Exception types shared across the package.

The CLI maps these onto exit codes: contract/configuration problems exit
with 1, I/O problems with 2, training divergence with 3.
"""


class AttrDialError(Exception):
    """Base class for all package errors."""


class ContractError(AttrDialError, ValueError):
    """A precondition or interface contract was violated."""


class DecodeError(AttrDialError):
    """Malformed image byte stream. Carries the offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(AttrDialError):
    """Structurally valid image file in a format we deliberately reject."""


class DegenerateDistributionError(AttrDialError, ValueError):
    """Value distribution too degenerate to bin (fewer than 2 values, or max == min)."""


class UnbalanceableBinError(AttrDialError, ValueError):
    """A bin has no records, so it cannot be over-sampled."""

    def __init__(self, bin_index: int):
        super().__init__(f"bin {bin_index} is empty and cannot be balanced")
        self.bin_index = bin_index


class UndefinedRateError(AttrDialError, ValueError):
    """Removal rate requested with a zero baseline count."""


class TrainingDivergenceError(AttrDialError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step


class ConfigError(AttrDialError, ValueError):
    """Invalid or inconsistent run configuration."""
