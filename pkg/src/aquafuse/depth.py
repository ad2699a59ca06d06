"""Single-image relative depth from the two-term exponential on RMI planes.

The predictor is ``mu0 + mu1 * exp(mu2 * R) + mu3 * exp(mu4 * M)``; the
coefficients come from an offline least-squares fit against reference depth
maps. Inference normalizes the raw prediction to [0, 1] per image and
median-blurs it, which stabilizes the background-light selection downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, warn_and_record
from .imaging import DepthMap, Image, median_blur, require_same_shape, to_rmi
from .lsq import least_squares

DEPTH_BLUR_KERNEL = 7
SCHEMA = "aquafuse/v1"

# Neutral starting point for the coefficient fit: unit amplitudes, gentle decay.
DEFAULT_INITIAL_GUESS = (0.0, 1.0, -1.0, 1.0, -1.0)


@dataclass(frozen=True, eq=False)
class DepthCoeffs:
    """The five fitted constants of the depth regression."""

    mu: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        if arr.shape != (5,):
            raise ParameterError(f"depth coefficients must have 5 entries, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("depth coefficients must be finite")
        object.__setattr__(self, "mu", arr)

    def to_json(self) -> dict:
        return {"schema": SCHEMA, "mu": [float(v) for v in self.mu]}

    @classmethod
    def from_json(cls, payload: dict) -> "DepthCoeffs":
        if "mu" not in payload:
            raise ParameterError("coefficient JSON must contain a 'mu' array")
        return cls(np.asarray(payload["mu"], dtype=np.float64))

    @classmethod
    def load(cls, path: str | Path) -> "DepthCoeffs":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def default_coeffs() -> DepthCoeffs:
    """Coefficients shipped with the package.

    Fit on this package's synthetic scene family, not on natural underwater
    imagery; refit with :func:`fit_depth_coeffs` for field deployments.
    """
    path = Path(__file__).parent / "data" / "default_coeffs.json"
    return DepthCoeffs.load(path)


def raw_depth(image: Image, coeffs: DepthCoeffs) -> np.ndarray:
    """Un-normalized per-pixel depth prediction from the R and M planes."""
    planes = to_rmi(image)
    mu = coeffs.mu
    return (
        mu[0]
        + mu[1] * np.exp(mu[2] * planes.r_plane)
        + mu[3] * np.exp(mu[4] * planes.m_plane)
    )


def estimate_depth(
    image: Image,
    coeffs: DepthCoeffs,
    warn_sink: list[str] | None = None,
) -> DepthMap:
    """Relative depth in [0, 1]: raw prediction, min-max normalize, median blur.

    A degenerate image whose raw predictions are all equal cannot be
    normalized; the result falls back to a constant 0.5 map with a warning.
    """
    raw = raw_depth(image, coeffs)
    lo = float(raw.min())
    hi = float(raw.max())
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        warn_and_record(
            "depth normalization degenerate (uniform prediction); returning constant 0.5",
            warn_sink,
        )
        return DepthMap(np.full(image.shape, 0.5, dtype=raw.dtype))
    normalized = (raw - lo) / (hi - lo)
    np.clip(normalized, 0.0, 1.0, out=normalized)
    return median_blur(DepthMap(normalized), DEPTH_BLUR_KERNEL)


def _collect_samples(
    samples: list[tuple[Image, DepthMap]],
    stride: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r_parts, m_parts, d_parts = [], [], []
    for image, depth in samples:
        require_same_shape(image, depth)
        planes = to_rmi(image)
        r_parts.append(planes.r_plane[::stride, ::stride].ravel())
        m_parts.append(planes.m_plane[::stride, ::stride].ravel())
        d_parts.append(depth.values[::stride, ::stride].ravel())
    r = np.concatenate(r_parts).astype(np.float64)
    m = np.concatenate(m_parts).astype(np.float64)
    d = np.concatenate(d_parts).astype(np.float64)
    return r, m, d


def fit_depth_coeffs(
    samples: list[tuple[Image, DepthMap]],
    stride: int = 4,
    max_iter: int = 200,
    initial_guess: tuple[float, ...] = DEFAULT_INITIAL_GUESS,
) -> DepthCoeffs:
    """Fit the five depth coefficients to (image, reference depth) pairs.

    Pixels are subsampled with the given stride for tractability; the fit
    minimizes the summed squared prediction error with damped Gauss-Newton
    iterations (analytic Jacobian, relative cost tolerance 1e-8).
    """
    if not samples:
        raise ParameterError("at least one (image, depth) pair is required")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    r, m, d = _collect_samples(samples, stride)

    def residual_jac(mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        exp_r = np.exp(mu[2] * r)
        exp_m = np.exp(mu[4] * m)
        residual = mu[0] + mu[1] * exp_r + mu[3] * exp_m - d
        jac = np.stack(
            [np.ones_like(r), exp_r, mu[1] * r * exp_r, exp_m, mu[3] * m * exp_m],
            axis=1,
        )
        return residual, jac

    result = least_squares(
        residual_jac,
        np.asarray(initial_guess, dtype=np.float64),
        max_iter=max_iter,
        rel_cost_tol=1e-8,
    )
    return DepthCoeffs(result.params)
