"""Exception hierarchy. Every error raised on purpose derives from SaufnoError."""


class SaufnoError(Exception):
    """Base class."""


class ShapeError(SaufnoError, ValueError):
    pass


class IndivisibleSpatialDims(ShapeError):
    pass


class ModeCountError(ShapeError):
    pass


class NonFiniteError(SaufnoError, FloatingPointError):
    pass


class UnknownChip(SaufnoError, KeyError):
    def __str__(self):  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "unknown chip"


class EmptyBlockList(SaufnoError, ValueError):
    pass


class GeometryError(SaufnoError, ValueError):
    pass


class SolverDidNotConverge(SaufnoError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DatasetFormatError(SaufnoError, ValueError):
    pass


class BadMagic(SaufnoError, ValueError):
    pass


class CheckpointNotFound(SaufnoError, FileNotFoundError):
    pass


class CheckpointFormatError(SaufnoError, ValueError):
    pass


class TrainingDiverged(SaufnoError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class TooFewSamples(SaufnoError, ValueError):
    pass
