"""Exception hierarchy.

The CLI maps the three base classes onto distinct exit codes, so every
error raised by the library derives from exactly one of them.
"""


class DrebinExplainError(Exception):
    pass


class ConfigError(DrebinExplainError):
    pass


class DataError(DrebinExplainError):
    pass


class ComputationError(DrebinExplainError):
    pass


class UnknownPrefix(DataError):
    pass


class UnknownFeature(DataError):
    pass


class EmptyVocabulary(DataError):
    pass


class EmptyClass(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class VocabularyMismatch(DataError):
    pass


class InvalidGamma(ConfigError):
    pass


class NonDifferentiable(ComputationError):
    pass


class NoDifferentiableRoute(ComputationError):
    pass


class DegenerateRelabeling(ComputationError):
    pass


class DegenerateRelevance(ComputationError):
    pass


class EmptyGroup(ComputationError):
    pass


class GroupMismatch(ComputationError):
    pass


class PreconditionViolation(ComputationError):
    pass
