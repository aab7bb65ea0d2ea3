"""Exception hierarchy shared by every package in the repo.

main.py maps these onto process exit codes: usage/configuration 1,
data 2, numeric 3.
"""


class DemandResponseError(Exception):
    """Base class for all errors raised by this project."""


class DataError(DemandResponseError):
    """Malformed, incomplete or insufficient input data."""


class ShapeError(DemandResponseError, ValueError):
    """Array dimensions do not compose."""


class ConfigurationError(DemandResponseError):
    """An appliance, environment or run setting cannot be satisfied."""


class NumericError(DemandResponseError):
    """Training diverged (NaN or infinite loss)."""


class EpisodeError(DemandResponseError):
    """The environment was driven outside an active episode."""


class MissingArtifactError(DataError):
    """A checkpoint or dataset produced by another command is missing."""

    def __init__(self, path, producer: str):
        self.path = str(path)
        self.producer = producer
        super().__init__(
            f"Missing artifact: {self.path}. Run `python main.py {producer}` first."
        )
