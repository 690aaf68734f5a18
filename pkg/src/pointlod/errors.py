"""Exception types shared across the pointlod pipeline."""


class PointLodError(Exception):
    """Base class for all pointlod errors."""


class UnsupportedFormatError(PointLodError):
    """File extension/magic mismatch or a format dialect we reject."""


class MalformedHeaderError(PointLodError):
    """Header is truncated or internally inconsistent."""


class LazNotSupportedError(UnsupportedFormatError):
    """LAZ input seen but no decoder is registered."""


class IndexOutOfRangeError(PointLodError, IndexError):
    """Requested point range exceeds the source point count."""


class CancelledError(PointLodError):
    """Cooperative cancellation was observed."""


class InconsistentChunksError(PointLodError):
    """Chunk node names overlap; they must be mutually prefix-free."""


class DegenerateCameraError(PointLodError):
    """Camera with zero-length axes or near >= far."""


class DimensionMismatchError(PointLodError):
    """Image/framebuffer dimensions disagree."""


class NodeNotResidentError(PointLodError):
    """A plan's render set references a node the cache has not loaded."""


class QueueClosedError(PointLodError):
    """Dispatcher used after shutdown."""
