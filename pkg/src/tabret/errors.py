"""Exception types shared across the package."""


class TabretError(Exception):
    """Base class for all package errors."""


class SchemaError(TabretError):
    """Input data or configuration violates a documented contract."""


class FingerprintMismatchError(TabretError):
    """An index was built under settings incompatible with the current model."""
