"""Exception hierarchy shared across the package.

Two top-level families matter for the CLI exit-code mapping:
``DataError`` (bad inputs, files, arguments referring to data) maps to
exit code 2 and ``NumericalError`` (solver breakdown) maps to exit 3.
"""


class TfsegError(Exception):
    """Base class for all package errors."""


class DataError(TfsegError):
    """Invalid or inconsistent input data."""


class NumericalError(TfsegError):
    """Numerical failure inside a solver."""


# --- volume / feature file I/O ---

class MissingSidecar(DataError):
    pass


class DimMismatch(DataError):
    pass


class UnsupportedDtype(DataError):
    pass


class BadMagic(DataError):
    pass


class VersionUnsupported(DataError):
    pass


class IoFailure(DataError):
    pass


# --- feature pipeline ---

class FeatureDimMismatch(DataError):
    pass


class IncompatibleDims(DataError):
    pass


class DegenerateVolume(DataError):
    pass


# --- similarity / annotations ---

class EmptyAnnotationSet(DataError):
    pass


class OutOfBounds(DataError):
    pass


class EmptyMask(DataError):
    pass


# --- bilateral solver ---

class DegenerateCrop(DataError):
    pass


class EmptySelection(DataError):
    pass


class NumericalBreakdown(NumericalError):
    pass


# --- rendering ---

class NoEnabledClasses(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


# --- synthetic generators ---

class DegenerateTorus(DataError):
    pass


# --- evaluation ---

class UnknownLabel(DataError):
    pass


# --- service ---

class VolumeNotFound(DataError):
    pass


class UnknownClass(DataError):
    pass
