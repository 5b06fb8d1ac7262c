"""Exception types shared across the pipeline."""


class OctError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(OctError):
    """Invalid configuration: incompatible shapes, bad layer chains, bad flags."""


class DataError(OctError):
    """Malformed or inconsistent input data (CSV rows, labels, splits)."""


class ImageFormatError(OctError):
    """Malformed PGM/PPM/heatmap file."""


class WeightFormatError(OctError):
    """Malformed OCTW weight file."""


class ScanRejected(DataError):
    """A scan cannot be used (e.g. too few slices). Recorded, not fatal."""


class NumericError(OctError):
    """A tensor left the finite-value domain (NaN or Inf)."""
