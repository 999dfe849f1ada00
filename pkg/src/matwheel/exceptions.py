"""Exception hierarchy for the pipeline."""


class MatWheelError(Exception):
    """Base class for all package errors."""


class MalformedRecord(MatWheelError, ValueError):
    pass


class InvalidLattice(MatWheelError, ValueError):
    pass


class TooManyAtoms(MatWheelError, ValueError):
    pass


class EmptyStructure(MatWheelError, ValueError):
    pass


class EmptyDataset(MatWheelError, ValueError):
    pass


class EmptyTrainingSet(EmptyDataset):
    pass


class DegenerateCell(MatWheelError, ValueError):
    pass


class ShapeMismatch(MatWheelError, ValueError):
    pass


class EmptyInput(MatWheelError, ValueError):
    pass


class NonFiniteInput(MatWheelError, ValueError):
    pass


class LengthMismatch(MatWheelError, ValueError):
    pass


class ConfigError(MatWheelError, ValueError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path
