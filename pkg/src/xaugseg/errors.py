"""Exception classes raised across the pipeline."""


class PipelineError(Exception):
    """Base class for every error this package raises deliberately."""


# volume I/O
class NiftiError(PipelineError, ValueError):
    pass


class BadMagic(NiftiError):
    pass


class BadHeader(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class TruncatedData(NiftiError):
    pass


# preprocessing
class DegenerateVolume(PipelineError, ValueError):
    pass


class DegenerateIntensityRange(PipelineError, ValueError):
    pass


# patching
class PatchLargerThanSlice(PipelineError, ValueError):
    pass


class PatchOutOfBounds(PipelineError, ValueError):
    pass


class UncoveredPixel(PipelineError, ValueError):
    pass


class PatchFileError(PipelineError, ValueError):
    pass


# augmentation / metrics
class DimensionMismatch(PipelineError, ValueError):
    pass


class EmptyCohort(PipelineError, ValueError):
    pass


# model
class ShapeMismatch(PipelineError, ValueError):
    pass


class OddSpatialDims(PipelineError, ValueError):
    pass


class BadSpatialSize(PipelineError, ValueError):
    pass


class EmptyDataset(PipelineError, ValueError):
    pass


class CheckpointError(PipelineError, ValueError):
    pass


# phantom / experiment
class ConfigInfeasible(PipelineError, ValueError):
    pass


class IncompleteGrid(PipelineError, ValueError):
    pass
