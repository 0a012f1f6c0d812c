"""Exception types.

Every error carries a stable ``code`` (used in the CLI's JSON error object)
and an ``exit_code``: 1 for input/validation problems, 2 for runtime or data
problems.
"""


class NatRobustError(Exception):
    exit_code = 2

    @property
    def code(self) -> str:
        return type(self).__name__


class ValidationError(NatRobustError):
    exit_code = 1


# image_core
class DimensionMismatch(ValidationError):
    pass


class OutOfBounds(ValidationError):
    pass


class InvalidSize(ValidationError):
    pass


class CodecFailure(NatRobustError):
    pass


class DecodeError(NatRobustError):
    pass


# distortions
class InvalidSeverity(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


# dataset
class ParseError(ValidationError):
    pass


class SchemaViolation(ValidationError):
    pass


class MissingFile(NatRobustError):
    pass


class InvalidOffset(ValidationError):
    pass


class BadFractions(ValidationError):
    pass


# predictor
class DuplicateKey(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class ProtocolError(NatRobustError):
    pass


class ServiceConnectionError(NatRobustError, ConnectionError):
    pass


class ServiceTimeout(NatRobustError, TimeoutError):
    pass


# reference_trainer
class ShapeMismatch(ValidationError):
    pass


class NonFiniteLoss(NatRobustError):
    pass


# metrics / analysis
class UndefinedConditional(NatRobustError):
    pass


class MissingPredictions(NatRobustError):
    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class WrongArity(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class DegenerateVariance(NatRobustError):
    pass


class EmptyInput(ValidationError):
    pass


# cli
class ConfigError(ValidationError):
    pass
