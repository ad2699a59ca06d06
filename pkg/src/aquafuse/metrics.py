"""Image and depth quality measures: PSNR, single-scale SSIM, depth RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatchError, ParameterError
from .imaging import DepthMap, Image

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class MetricReport:
    """PSNR (dB, inf for identical inputs), SSIM, and optional depth RMSE."""

    psnr_db: float
    ssim: float
    depth_rmse: float | None = None

    def to_json(self) -> dict:
        payload: dict = {
            "schema": "aquafuse/v1",
            "psnr_db": "infinite" if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
        }
        if self.depth_rmse is not None:
            payload["depth_rmse"] = self.depth_rmse
        return payload


def _check_pair(a: Image, b: Image) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"images differ: {a.shape} vs {b.shape}")


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio with peak 1.0, all channels pooled."""
    _check_pair(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_channel(a: np.ndarray, b: np.ndarray, window: int, c1: float, c2: float) -> float:
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def ssim(
    a: Image,
    b: Image,
    window: int = SSIM_WINDOW,
    c1: float = SSIM_C1,
    c2: float = SSIM_C2,
) -> float:
    """Single-scale SSIM: uniform sliding window, stride 1, dynamic range 1.

    Computed per channel with population moments (no luminance transform),
    then averaged over channels and windows.
    """
    _check_pair(a, b)
    if min(a.shape) < window:
        raise ParameterError(
            f"images must be at least {window}x{window} for the SSIM window"
        )
    values = [
        _ssim_channel(
            a.data[:, :, c].astype(np.float64),
            b.data[:, :, c].astype(np.float64),
            window,
            c1,
            c2,
        )
        for c in range(3)
    ]
    return float(np.mean(values))


def depth_rmse(a: DepthMap, b: DepthMap, scale: float = 100.0) -> float:
    """Root-mean-square depth difference after scaling both maps.

    The default scale of 100 expresses normalized-depth error in percent-like
    units.
    """
    if a.shape != b.shape:
        raise DimensionMismatchError(f"depth maps differ: {a.shape} vs {b.shape}")
    if not (scale > 0.0 and math.isfinite(scale)):
        raise ParameterError(f"scale must be positive and finite, got {scale}")
    diff = scale * (a.values.astype(np.float64) - b.values.astype(np.float64))
    return float(np.sqrt(np.mean(diff * diff)))


def compare(a: Image, b: Image, depth_a: DepthMap | None = None, depth_b: DepthMap | None = None) -> MetricReport:
    """Bundle PSNR/SSIM (and depth RMSE when both maps are given)."""
    rmse = None
    if depth_a is not None and depth_b is not None:
        rmse = depth_rmse(depth_a, depth_b)
    return MetricReport(psnr_db=psnr(a, b), ssim=ssim(a, b), depth_rmse=rmse)
