class BullBearError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(BullBearError, ValueError):
    pass


class DimensionError(BullBearError, ValueError):
    pass


class GraphError(BullBearError, RuntimeError):
    pass


class NonFiniteError(BullBearError, ArithmeticError):
    pass


class ParseError(BullBearError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DataError(BullBearError, ValueError):
    pass


class InsufficientDataError(DataError):
    pass


class TrainingError(BullBearError, RuntimeError):
    def __init__(self, message, batch=None):
        self.batch = batch
        super().__init__(message)


class CheckpointError(BullBearError, ValueError):
    pass
