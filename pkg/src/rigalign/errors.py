"""Exception hierarchy shared across the package."""


class RigalignError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RigalignError):
    """Invalid or inconsistent run configuration."""


class ParseError(RigalignError):
    """A referenced file is missing or malformed."""


class EmptyMesh(RigalignError):
    """Mesh has no faces."""


class ZeroArea(RigalignError):
    """Mesh has zero total surface area."""


class EmptyCloud(RigalignError):
    """Point cloud has no points."""


class DegenerateCloud(RigalignError):
    """Point cloud carries no usable spatial extent."""


class SizeMismatch(RigalignError):
    """Point sets must have the same size."""


class DegenerateGeometry(RigalignError):
    """Correspondence geometry is rank-deficient."""


class EmptyList(RigalignError):
    """An aggregate over an empty collection was requested."""


class InsufficientSamples(RigalignError):
    """Not enough samples to fit the requested model."""


class EmptyOverlap(RigalignError):
    """Masked pixel domains of two feature maps do not intersect."""


class EmptyTable(RigalignError):
    """Emission table has no frames or no states."""


class TooLarge(RigalignError):
    """Problem size exceeds the exhaustive-enumeration budget."""
