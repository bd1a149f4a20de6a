"""Exception hierarchy shared by all kmfm modules.

Each error carries the CLI exit code it maps to (2 config, 3 data, 4 numerical).
"""


class KmfmError(Exception):
    exit_code = 1


class ConfigError(KmfmError):
    exit_code = 2


class DataError(KmfmError):
    exit_code = 3


class NumericalError(KmfmError):
    exit_code = 4


# dataset
class SchemaMismatch(DataError):
    pass


class UnknownLevel(DataError):
    pass


class EmptyDataset(DataError):
    pass


class ParseError(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class NetworkError(DataError):
    pass


class IntegrityError(DataError):
    pass


# shape and argument guards used across modules
class ShapeMismatch(NumericalError):
    pass


class InvalidSpec(ConfigError):
    pass


class StaleCache(NumericalError):
    pass


class DivergenceDetected(NumericalError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class AsymmetricInput(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class BadL(ConfigError):
    pass


class DegenerateInput(NumericalError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class NonConvergence(NumericalError):
    """Raised only when the caller asks for strict convergence."""
