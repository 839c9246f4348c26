"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
data problems with 3 and numeric failures with 4.
"""


class CZSLError(Exception):
    exit_code = 1


class ShapeError(CZSLError, ValueError):
    pass


class NumericError(CZSLError, ArithmeticError):
    exit_code = 4


class ConfigError(CZSLError, ValueError):
    exit_code = 2


class UsageError(CZSLError, RuntimeError):
    pass


class DataError(CZSLError):
    exit_code = 3


class MissingFileError(DataError, FileNotFoundError):
    pass


class DatasetShapeError(DataError, ShapeError):
    exit_code = 3


class LabelRangeError(DataError, ValueError):
    pass


class NonFiniteValueError(DataError, NumericError):
    exit_code = 3


class IntegrityError(DataError):
    pass


class TrainingError(CZSLError):
    pass


class EvaluationError(CZSLError):
    pass
