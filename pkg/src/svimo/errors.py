"""Exception hierarchy shared by the library and the CLI.

Every ``SvimoError`` subclass carries the process exit code the CLI uses for it.
"""


class SvimoError(Exception):
    exit_code: int = 1


class ConfigError(SvimoError):
    """Invalid or unknown configuration field."""

    exit_code = 2


class IntegrityError(SvimoError):
    """On-disk artifact is truncated, corrupted, or inconsistent with its manifest."""

    exit_code = 3


class ArchitectureMismatchError(IntegrityError):
    """Checkpoint architecture hash does not match the configured model."""


class NumericalError(SvimoError):
    """A loss or prediction became NaN/Inf."""

    exit_code = 4


class ConvergenceError(NumericalError):
    """A fit did not reach its target within the step budget."""


class MissingArtifactError(SvimoError):
    """A checkpoint, dataset, or generation directory is missing."""

    exit_code = 5


class InputError(SvimoError, ValueError):
    """A prompt, image or camera supplied by the caller cannot be used."""

    exit_code = 6


class VocabularyError(InputError):
    pass


class CameraError(InputError):
    pass


class ShapeMismatchError(ValueError):
    pass
