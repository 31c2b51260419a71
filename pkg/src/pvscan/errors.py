"""Exception hierarchy shared across pvscan modules."""


class PVScanError(Exception):
    """Base class for every error raised by pvscan."""


class InputError(PVScanError, ValueError):
    """Invalid user-supplied data (files, parameters, configs)."""


class UnsupportedFormat(InputError):
    pass


class MalformedHeader(InputError):
    pass


class TruncatedData(InputError):
    pass


class NonPositiveSigma(InputError):
    pass


class BadThresholds(InputError):
    pass


class DegenerateQuad(InputError):
    pass


class NoPanels(PVScanError):
    pass


class GridTooFine(InputError):
    pass


class NoValidCells(PVScanError):
    pass


class BadTolerances(InputError):
    pass


class InconsistentCounts(InputError):
    pass


class InvalidSpec(InputError):
    pass


class UnmatchedImage(InputError):
    pass


class ConfigError(InputError):
    pass


class Parallel(PVScanError):
    """Two lines with (numerically) equal direction have no single intersection."""
