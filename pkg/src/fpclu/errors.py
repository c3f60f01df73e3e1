"""Exception hierarchy shared by every stage of the pipeline."""


class FpcluError(Exception):
    """Base class for all library errors."""


class DataError(FpcluError):
    """Input data is unusable (maps to CLI exit code 2)."""


class IoFailure(FpcluError, OSError):
    pass


# raster
class PgmError(DataError):
    pass


class MalformedHeader(PgmError):
    pass


class UnsupportedMaxval(PgmError):
    pass


class TruncatedData(PgmError):
    pass


class ManifestError(DataError):
    pass


class SizeTooSmall(FpcluError, ValueError):
    pass


# preprocess / orientfield
class EmptyRoi(DataError):
    pass


class NoCoreFound(DataError):
    pass


class InsufficientRidges(DataError):
    pass


# metabase
class ZeroStep(FpcluError, ValueError):
    pass


class NoSkeletonNearStart(DataError):
    pass


class AllImagesFailed(DataError):
    pass


class MalformedRow(DataError):
    pass


# mining
class SeedShortfall(FpcluError):
    """Fewer seed groups than requested classes (CLI exit code 3)."""


# cluster / eval
class DegenerateVector(FpcluError, ValueError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(FpcluError, ValueError):
    pass


class NoLabels(DataError):
    pass
