"""Exception types shared across the package."""


class RtmixError(Exception):
    """Base class for every error this package raises on purpose."""


class DataFormatError(RtmixError):
    """A data or config file is structurally unusable (missing columns, bad header)."""


class RowError(DataFormatError):
    """A single data row is invalid.

    Carries the 1-based physical line number of the offending row so the
    message can point at the file location.
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InfeasibleSplitError(RtmixError):
    """No fold assignment can satisfy the partition constraints."""


class FoldError(RtmixError):
    """A cross-validation fold failed to fit; carries the 1-based fold index."""

    def __init__(self, fold: int, message: str):
        super().__init__(f"fold {fold}: {message}")
        self.fold = fold


class AlignmentError(RtmixError):
    """Two containers that must describe the same trials or parameters do not match."""


class NumericalError(RtmixError):
    """A density, gradient, or predictive evaluation produced a non-finite value.

    Optional fields locate the failure: ``coordinate`` is an index into the
    parameter vector, ``trial`` an index into the trial list, ``draw`` an
    index into the flattened posterior draws.  Values are never clamped; the
    error propagates so callers can decide (the sampler rejects the proposal,
    everything else fails loudly).
    """

    def __init__(self, message: str, coordinate=None, trial=None, draw=None):
        detail = []
        if coordinate is not None:
            detail.append(f"coordinate {coordinate}")
        if trial is not None:
            detail.append(f"trial {trial}")
        if draw is not None:
            detail.append(f"draw {draw}")
        if detail:
            message = f"{message} ({', '.join(detail)})"
        super().__init__(message)
        self.coordinate = coordinate
        self.trial = trial
        self.draw = draw


class InitializationError(NumericalError):
    """No finite starting point was found within the retry budget."""
