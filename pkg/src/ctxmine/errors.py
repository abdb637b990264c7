"""Exception hierarchy. Every error carries enough context to name its input."""


class CtxmineError(Exception):
    """Base class for all package errors."""


class DimensionError(CtxmineError, ValueError):
    pass


class DivergenceError(CtxmineError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class EvaluationError(CtxmineError, ValueError):
    pass


class VocabularyError(CtxmineError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigurationError(CtxmineError, ValueError):
    pass


class EmptyInputError(CtxmineError, ValueError):
    pass


class UndefinedSimilarityError(CtxmineError, ValueError):
    pass


class FittingError(CtxmineError, ValueError):
    pass


class ConvergenceError(CtxmineError, RuntimeError):
    def __init__(self, message, iterations):
        super().__init__(f"{message} after {iterations} iterations")
        self.iterations = iterations


class UsageError(CtxmineError, ValueError):
    pass


class ParameterError(CtxmineError, ValueError):
    pass


class ParseError(CtxmineError, ValueError):
    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}".strip())
        self.path = path
        self.lineno = lineno


class IntegrityError(CtxmineError, ValueError):
    pass


class SamplingError(CtxmineError, ValueError):
    pass


class PartitioningError(CtxmineError, ValueError):
    pass
