"""Exception and warning types shared across the package."""

from __future__ import annotations

import numpy as np


class AquafuseError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(AquafuseError, ValueError):
    """An argument violates a documented precondition (bad kernel, bad range, ...)."""


class DimensionMismatchError(ParameterError):
    """Buffers that must share dimensions do not."""


class FitDivergedError(AquafuseError, RuntimeError):
    """Nonlinear least-squares cost became non-finite.

    Carries the last iterate with a finite cost so callers can salvage it.
    """

    def __init__(self, message: str, last_params: np.ndarray):
        super().__init__(message)
        self.last_params = np.asarray(last_params, dtype=np.float64)


class EstimationWarning(UserWarning):
    """An estimator fell back to a degraded path but produced a usable result."""


def warn_and_record(message: str, sink: list[str] | None) -> None:
    """Emit an EstimationWarning and append it to ``sink`` when provided.

    The sink keeps warning collection thread-safe: callers that assemble a
    result object pass their own list instead of relying on the global
    warnings registry.
    """
    import warnings

    warnings.warn(message, EstimationWarning, stacklevel=3)
    if sink is not None:
        sink.append(message)
