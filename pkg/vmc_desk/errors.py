"""
Error hierarchy shared by every app.

Each class carries the exit code the management commands report for it:
2 for configuration problems, 3 for checkpoint problems, 4 for metric
prerequisites.
"""


class VMCError(Exception):
    exit_code = 1


class ConfigError(VMCError):
    exit_code = 2


class InvalidRangeError(ConfigError):
    pass


class ShapeMismatchError(ConfigError):
    pass


class UnknownCategoryError(ConfigError):
    pass


class PromptNotInvariantError(ConfigError):
    pass


class TrajectoryError(ConfigError):
    pass


class EmptyCorpusError(ConfigError):
    pass


class CheckpointError(VMCError):
    exit_code = 3


class FrozenStageError(CheckpointError):
    pass


class MetricPrerequisiteError(VMCError):
    exit_code = 4


class ClassifierMissingError(MetricPrerequisiteError):
    pass
