"""Exception hierarchy shared across the simulator.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, everything else that is ours exits 4.
"""


class FedKDError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FedKDError):
    """Invalid configuration: bad ranges, inconsistent shapes, unknown keys."""


class UsageError(FedKDError):
    """API misuse: stale caches, mismatched argument lengths."""


class DataError(FedKDError):
    """Bad input data: unknown labels, ingestion failures, sharding problems."""


class FormatError(DataError):
    """Malformed binary blob: bad magic, truncation, schema mismatch."""


class ProtocolError(FedKDError):
    """Federation protocol violation: empty aggregation, mixed rounds."""


class AccountingError(FedKDError):
    """Communication accounting over an incomplete or inconsistent event log."""


class NumericError(FedKDError):
    """Non-finite values where finite ones are required (NaN/Inf gradients)."""
