"""Semantic exceptions shared across the library.

Usage errors (bad arguments, dimension mismatches) raise plain
``ValueError`` so they compose with numpy/scipy conventions; the classes
below mark conditions that callers may want to catch separately.
"""


class DpmixError(Exception):
    """Base class for non-usage library failures."""


class ResourceLimitError(DpmixError):
    """A construction would exceed a hard size cap (net too large,
    stick truncation cap exceeded, ...)."""


class CertificationError(DpmixError):
    """A measured quantity violated a bound the construction promises
    (e.g. a net projection farther than its certified radius)."""
