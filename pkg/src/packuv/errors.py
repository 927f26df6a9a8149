"""Exception hierarchy.

Errors fall into three families so the CLI can map them onto distinct exit
codes: configuration problems, malformed files/streams, and bad input data.
"""


class PackUVError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PackUVError):
    pass


class FormatError(PackUVError):
    pass


class DataError(PackUVError):
    pass


class InvalidConfig(ConfigError):
    pass


class LayoutOverflow(ConfigError):
    pass


class EncoderUnavailable(ConfigError):
    pass


class OriginDegenerate(DataError):
    """A point coincides with the projection origin (radius 0)."""


class InvalidDepth(DataError):
    pass


class BehindCamera(DataError):
    pass


class DegenerateCovariance(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class GeometryMismatch(DataError):
    pass


class SpecMismatch(DataError):
    pass


class EmptySequence(DataError):
    pass


class DuplicateTimecode(DataError):
    pass


class UnknownReference(DataError):
    pass


class LossyRoundTrip(DataError):
    def __init__(self, message, plane_mismatches=None):
        super().__init__(message)
        self.plane_mismatches = plane_mismatches or {}


class StrayOccupancy(FormatError):
    pass


class TruncatedStream(FormatError):
    pass


class SchemaError(FormatError):
    pass


class UnsupportedVersion(FormatError):
    pass


class OutOfRange(DataError):
    pass
