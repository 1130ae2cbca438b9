"""Exception types shared across the package."""

from __future__ import annotations


class NumericFailure(RuntimeError):
    """An iterative routine produced non-finite values.

    ``step`` identifies where the failure occurred: an iteration index for
    solvers, a ``(reconstruction, sweep)`` pair for the diversity loop.
    """

    def __init__(self, message: str, step=None):
        super().__init__(message)
        self.step = step


class CalibrationFailure(RuntimeError):
    """Lesion-contrast calibration could not reach the target band."""

    def __init__(self, message: str, lo=None, hi=None, recall_lo=None, recall_hi=None):
        super().__init__(message)
        self.lo = lo
        self.hi = hi
        self.recall_lo = recall_lo
        self.recall_hi = recall_hi
