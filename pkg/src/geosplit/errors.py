from __future__ import annotations

from typing import Iterable


class GeosplitError(RuntimeError):
    pass


class BasisError(GeosplitError, ValueError):
    pass


class RankError(GeosplitError, IndexError):
    pass


class DimensionError(GeosplitError, ValueError):
    pass


class ProxError(GeosplitError, ValueError):
    pass


class ScheduleError(GeosplitError, ValueError):
    pass


class ObjectiveError(GeosplitError, ValueError):
    pass


class PdeSolverError(GeosplitError):
    pass


class TrainingDivergedError(GeosplitError):
    pass


class FetchError(GeosplitError):
    pass


class CheckFailed(GeosplitError):
    pass


class ConfigError(GeosplitError, ValueError):
    """Schema violation; ``keys`` names every offending dotted key."""

    def __init__(self, message: str, keys: Iterable[str] = ()) -> None:
        self.keys = list(keys)
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)
