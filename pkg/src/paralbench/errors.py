"""Exception hierarchy shared by every paralbench module.

The CLI maps the three top-level families onto distinct exit codes, so new
errors should subclass one of ``ConfigError``, ``DataError`` or ``RunError``.
"""


class ParalbenchError(Exception):
    pass


class ConfigError(ParalbenchError):
    pass


class DataError(ParalbenchError):
    pass


class RunError(ParalbenchError):
    pass


# task registry

class DuplicateTask(ConfigError):
    pass


class InvalidTaskSpec(ConfigError):
    pass


class UnknownTask(ConfigError):
    pass


class UnknownLabel(DataError):
    def __init__(self, raw, space_name=""):
        self.raw = raw
        where = f" in label space {space_name!r}" if space_name else ""
        super().__init__(f"unknown label {raw!r}{where}")


class EmptyMapping(DataError):
    pass


# corpus

class ManifestError(DataError):
    pass


class MissingPartitionFiles(ManifestError):
    pass


class AlreadyAssigned(ManifestError):
    pass


class UncoveredGroup(ManifestError):
    pass


# features

class CheckpointUnavailable(RunError):
    pass


class AudioTooShort(DataError):
    pass


class NonFiniteFeatures(RunError):
    pass


class UnknownExtractor(ConfigError):
    pass


# probe

class DimensionMismatch(RunError):
    pass


class WrongPath(RunError):
    pass


class TrainingDiverged(RunError):
    pass


class HookUnsupported(RunError):
    pass


class BindingMismatch(RunError):
    pass
