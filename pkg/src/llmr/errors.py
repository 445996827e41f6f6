"""Exception hierarchy. Each error class carries the CLI exit code it maps to."""


class LLMRError(Exception):
    exit_code = 1


class ConfigurationError(LLMRError, ValueError):
    exit_code = 2


class InvalidTokenError(ConfigurationError):
    pass


class EmptySequenceError(ConfigurationError):
    pass


class EmptyInputError(ConfigurationError):
    pass


class NotTrainableError(ConfigurationError):
    pass


class CapacityError(LLMRError):
    exit_code = 3


class NumericError(LLMRError, ArithmeticError):
    exit_code = 4


class CorpusIOError(LLMRError, OSError):
    exit_code = 5
