"""Exception hierarchy. Every error raised by the package derives from FairDROError."""


class FairDROError(ValueError):
    pass


class SchemaError(FairDROError):
    pass


class ParseError(FairDROError):
    pass


class EmptyInputError(FairDROError):
    pass


class EmptyCellError(FairDROError):
    def __init__(self, cells):
        self.cells = list(cells)
        names = ", ".join(f"(y={y}, a={a})" for y, a in self.cells)
        super().__init__(f"empty (class, group) cell(s): {names}")


class DivisibilityError(FairDROError):
    pass


class StratificationError(FairDROError):
    pass


class SpecError(FairDROError):
    pass


class ShapeError(FairDROError):
    pass


class EmptyBatchError(FairDROError):
    pass


class RangeError(FairDROError):
    pass


class ConstraintError(FairDROError):
    pass


class OracleScopeError(FairDROError):
    pass


class BatchCompositionError(FairDROError):
    pass


class TrainingDivergedError(FairDROError):
    def __init__(self, epoch, message="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")
