"""Exception hierarchy shared across the pipeline.

Exit-code mapping used by the CLI: validation problems exit 2, numeric
failures exit 3, disconnected graphs exit 4.
"""
from __future__ import annotations


class CsfmError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ValidationError(CsfmError):
    """Malformed input: bad file, violated invariant, out-of-range index."""

    exit_code = 2


class NumericError(CsfmError):
    """Numerical failure: rank deficiency, degenerate geometry, no consensus."""

    exit_code = 3


class DisconnectedGraphError(CsfmError):
    """An operation that requires a connected (measurement) graph got a split one."""

    exit_code = 4


class DegenerateGeometryError(NumericError):
    """Point configuration does not determine the transform (collinear/coincident)."""


class RansacFailureError(NumericError):
    """No hypothesis reached the minimum consensus size."""


class RankDeficientSystemError(NumericError):
    """Singular (weighted) normal equations; usually a missing gauge or a split graph."""
