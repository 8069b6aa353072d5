"""Exception hierarchy and CLI exit codes."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


class FsciTricksError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FsciTricksError):
    """Invalid configuration: unknown keys, bad values, schema mismatch."""

    exit_code = EXIT_CONFIG


class DataError(FsciTricksError):
    """Invalid or insufficient data: bad manifests, impossible splits."""

    exit_code = EXIT_DATA


class DivergenceError(FsciTricksError):
    """Training produced a non-finite loss."""

    exit_code = EXIT_DIVERGENCE


class InsufficientClassesError(DataError):
    """Dataset has fewer classes than the session layout needs."""


class InsufficientShotsError(DataError):
    """A class has fewer training samples than the requested shot count."""

    def __init__(self, class_id: int, available: int, requested: int):
        self.class_id = class_id
        super().__init__(
            f"class {class_id} has {available} training samples, "
            f"{requested} shots requested"
        )


class UndefinedSeparationError(FsciTricksError):
    """Class separation is undefined because all pairwise distances are zero."""
