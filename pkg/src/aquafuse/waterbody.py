"""Waterbody parameter estimation from a single image plus its depth map.

The transferable "waterbody" consists of the veiling light, the backscatter
saturation curve, and the depth-dependent direct-attenuation model. All fits
run per channel through the shared damped Gauss-Newton solver.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .depth import DepthCoeffs, estimate_depth
from .errors import DimensionMismatchError, ParameterError, warn_and_record
from .imaging import DepthMap, Image, require_same_shape
from .lsq import least_squares, multistart_least_squares

SCHEMA = "aquafuse/v1"

ILLUMINATION_FLOOR = 1e-4
BETA_RATE_BOUND = 50.0
BETA_EXPONENT_BOUND = 20.0

# Images larger than this run the illumination solver coarse-to-fine; the
# plain sweep would need thousands of iterations to diffuse across megapixel
# grids.
_EXACT_ILLUMINATION_PIXELS = 512 * 512


@dataclass(frozen=True, eq=False)
class BackgroundLight:
    """Per-channel veiling light estimate, RGB in [0, 1]."""

    b_inf: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.b_inf, dtype=np.float64).reshape(-1)
        if arr.shape != (3,):
            raise ParameterError(f"background light must be an RGB triple, got {arr.shape}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError(f"background light must lie in [0, 1], got {arr}")
        object.__setattr__(self, "b_inf", arr)


@dataclass(frozen=True, eq=False)
class BackscatterParams:
    """Fitted saturation curve B(z) = b_inf * (1 - exp(-beta_b * z)) plus the
    residual term residual_j * exp(-residual_beta_d * z) absorbing leaked
    direct signal in the fit."""

    b_inf: BackgroundLight
    beta_b: np.ndarray
    residual_j: np.ndarray
    residual_beta_d: np.ndarray

    def __post_init__(self) -> None:
        for name in ("beta_b", "residual_j", "residual_beta_d"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape != (3,):
                raise ParameterError(f"{name} must have 3 entries, got {arr.shape}")
            if not np.isfinite(arr).all() or arr.min() < 0.0:
                raise ParameterError(f"{name} must be finite and >= 0, got {arr}")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True, eq=False)
class BetaDModel:
    """Two-term exponential attenuation model per channel.

    ``mu`` is (3, 4): rate(z) = mu0 * exp(mu1 * z) + mu2 * exp(mu3 * z).
    Rates must be non-negative over z in [0, 1]; fits guarantee this by
    keeping the amplitudes non-negative.
    """

    mu: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.mu, dtype=np.float64)
        if arr.shape != (3, 4):
            raise ParameterError(f"attenuation model must be (3, 4), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("attenuation model coefficients must be finite")
        object.__setattr__(self, "mu", arr)
        samples = self.evaluate(np.linspace(0.0, 1.0, 1001))
        if samples.min() < 0.0:
            raise ParameterError("attenuation rate must be >= 0 on z in [0, 1]")

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Per-channel attenuation rate at each depth; returns z.shape + (3,)."""
        z = np.asarray(z)
        zc = z[..., None]
        mu = self.mu
        return mu[:, 0] * np.exp(mu[:, 1] * zc) + mu[:, 2] * np.exp(mu[:, 3] * zc)

    @classmethod
    def constant(cls, rates) -> "BetaDModel":
        """Model with depth-independent rates (one per channel)."""
        rates = np.asarray(rates, dtype=np.float64).reshape(3)
        mu = np.zeros((3, 4))
        mu[:, 0] = rates
        return cls(mu)


@dataclass(frozen=True, eq=False)
class IlluminationMap:
    """Per-pixel, per-channel ambient light estimate, strictly positive."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ParameterError(f"illumination must be (H, W, 3), got {arr.shape}")
        if not np.isfinite(arr).all() or arr.min() <= 0.0 or arr.max() > 1.0 + 1e-6:
            raise ParameterError("illumination must be strictly positive and <= 1")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True, eq=False)
class WaterbodyParams:
    """The portable waterbody: veiling light, backscatter curve, attenuation."""

    background: BackgroundLight
    backscatter: BackscatterParams
    beta_d: BetaDModel
    warnings: tuple[str, ...] = field(default=())

    @property
    def b_inf(self) -> np.ndarray:
        """The transferable veiling light (the fitted value, not the seed)."""
        return self.backscatter.b_inf.b_inf


@dataclass(frozen=True, eq=False)
class SceneEstimate:
    """An image decomposed into depth, backscatter, illumination, and params."""

    image: Image
    depth: DepthMap
    params: WaterbodyParams
    backscatter_map: np.ndarray
    illumination: IlluminationMap

    def __post_init__(self) -> None:
        require_same_shape(self.image, self.depth)
        if self.backscatter_map.shape != self.image.data.shape:
            raise DimensionMismatchError(
                f"backscatter map is {self.backscatter_map.shape}, "
                f"image is {self.image.data.shape}"
            )
        if self.illumination.shape != self.image.shape:
            raise DimensionMismatchError(
                f"illumination is {self.illumination.shape}, image is {self.image.shape}"
            )


# ---------------------------------------------------------------------------
# background light


def _corner_candidates(data: np.ndarray, needed: int) -> np.ndarray:
    """Pixels from the top corners (then bottom corners if still short).

    Each corner block covers ~20% of the image area.
    """
    h, w = data.shape[:2]
    side = math.sqrt(0.2)
    ch = max(1, int(round(side * h)))
    cw = max(1, int(round(side * w)))
    blocks = [data[:ch, :cw], data[:ch, w - cw :]]
    total = sum(b.shape[0] * b.shape[1] for b in blocks)
    if total <= needed:
        blocks += [data[h - ch :, :cw], data[h - ch :, w - cw :]]
    return np.concatenate([b.reshape(-1, 3) for b in blocks], axis=0)


def estimate_background_light(
    image: Image,
    depth: DepthMap,
    warn_sink: list[str] | None = None,
) -> BackgroundLight:
    """Veiling light from the median color of the farthest 5% of pixels.

    Falls back to corner regions when the far mask is too small, and drops
    the bluish-green color filter (max(G,B) > R) if it would empty the
    candidate set.
    """
    require_same_shape(image, depth)
    data = image.data
    n_pixels = data.shape[0] * data.shape[1]
    if n_pixels < 100:
        raise ParameterError(f"need at least 100 pixels, image has {n_pixels}")

    threshold = np.quantile(depth.values, 0.95)
    mask = depth.values >= threshold  # ties at the quantile are all included
    if int(mask.sum()) > 100:
        candidates = data[mask]
    else:
        candidates = _corner_candidates(data, needed=100)

    bluish_green = np.maximum(candidates[:, 1], candidates[:, 2]) > candidates[:, 0]
    filtered = True
    if bluish_green.any():
        candidates = candidates[bluish_green]
    else:
        filtered = False
        warn_and_record(
            "bluish-green filter removed every background candidate; skipping filter",
            warn_sink,
        )

    median = np.median(candidates.astype(np.float64), axis=0)
    if filtered:
        # Channel-wise medians of filtered pixels can still leave R on top;
        # project so the estimate honors the filter's guarantee.
        median[0] = min(median[0], max(median[1], median[2]))
    return BackgroundLight(np.clip(median, 0.0, 1.0))


# ---------------------------------------------------------------------------
# backscatter


def collect_dark_samples(
    image: Image,
    depth: DepthMap,
    bins: int = 10,
    fraction: float = 0.01,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-channel (z, intensity) pairs from the darkest pixels of each depth bin.

    Binning the depth range keeps the samples spread in z; without it the
    dark pixels cluster at one depth and the saturation rate is
    unidentifiable.
    """
    require_same_shape(image, depth)
    z = depth.values.ravel().astype(np.float64)
    flat = image.data.reshape(-1, 3).astype(np.float64)
    z_min, z_max = float(z.min()), float(z.max())
    span = z_max - z_min
    if span <= 0.0:
        bin_index = np.zeros(z.shape, dtype=np.intp)
        bins = 1
    else:
        bin_index = np.minimum((bins * (z - z_min) / span).astype(np.intp), bins - 1)

    samples: list[tuple[np.ndarray, np.ndarray]] = []
    for channel in range(3):
        zs: list[np.ndarray] = []
        us: list[np.ndarray] = []
        intensities = flat[:, channel]
        for b in range(bins):
            members = np.flatnonzero(bin_index == b)
            if members.size == 0:
                continue
            keep = max(1, int(members.size * fraction))
            order = np.argpartition(intensities[members], keep - 1)[:keep]
            chosen = members[order]
            zs.append(z[chosen])
            us.append(intensities[chosen])
        samples.append((np.concatenate(zs), np.concatenate(us)))
    return samples


def fit_backscatter_curve(
    z: np.ndarray,
    u: np.ndarray,
    init_b_inf: float,
    restarts: int = 10,
    seed: int = 7,
) -> tuple[float, float, float, float]:
    """Fit (b_inf, beta_b, residual_j, residual_beta_d) to dark-pixel samples.

    Bounded fit with deterministic multistart: the first start is seeded at
    the supplied veiling-light estimate, the rest are drawn from a fixed-seed
    generator. Returns the lowest-cost parameter tuple.
    """
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)

    def residual_jac(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b, rate, res_j, res_d = p
        sat = np.exp(-rate * z)
        decay = np.exp(-res_d * z)
        residual = b * (1.0 - sat) + res_j * decay - u
        jac = np.stack([1.0 - sat, b * z * sat, decay, -res_j * z * decay], axis=1)
        return residual, jac

    lower = np.array([0.0, 0.0, 0.0, 0.0])
    upper = np.array([1.0, BETA_RATE_BOUND, 1.0, BETA_RATE_BOUND])
    starts = [np.array([init_b_inf, 1.0, 0.0, 1.0])]
    rng = np.random.default_rng(seed)
    for _ in range(max(restarts - 1, 0)):
        starts.append(
            np.array(
                [
                    rng.uniform(0.0, 1.0),
                    rng.uniform(0.1, 8.0),
                    rng.uniform(0.0, 0.3),
                    rng.uniform(0.1, 8.0),
                ]
            )
        )
    result = multistart_least_squares(residual_jac, starts, lower=lower, upper=upper)
    return tuple(float(v) for v in result.params)  # type: ignore[return-value]


def estimate_backscatter(
    image: Image,
    depth: DepthMap,
    init: BackgroundLight,
    warn_sink: list[str] | None = None,
) -> BackscatterParams:
    """Fit the per-channel backscatter curve from binned dark pixels."""
    samples = collect_dark_samples(image, depth)
    total = sum(s[0].size for s in samples) // 3 * 3  # per-channel counts match
    if samples[0][0].size < 10 or total < 10:
        warn_and_record(
            "too few dark samples for a backscatter fit; using seed values",
            warn_sink,
        )
        return BackscatterParams(
            b_inf=init,
            beta_b=np.ones(3),
            residual_j=np.zeros(3),
            residual_beta_d=np.ones(3),
        )
    fitted = np.empty((3, 4))
    for channel in range(3):
        z, u = samples[channel]
        fitted[channel] = fit_backscatter_curve(z, u, float(init.b_inf[channel]))
    return BackscatterParams(
        b_inf=BackgroundLight(fitted[:, 0]),
        beta_b=fitted[:, 1],
        residual_j=fitted[:, 2],
        residual_beta_d=fitted[:, 3],
    )


def backscatter_map(params: BackscatterParams, depth: DepthMap) -> np.ndarray:
    """Materialize B(x) = b_inf * (1 - exp(-beta_b * z(x))) per channel.

    The residual term is deliberately excluded: it models leaked direct
    signal, which must stay with the scene content rather than travel with
    the waterbody.
    """
    z = depth.values[..., None]
    b_inf = params.b_inf.b_inf
    return b_inf * (1.0 - np.exp(-params.beta_b * z))


# ---------------------------------------------------------------------------
# illumination


def _neighbor_mean(a: np.ndarray) -> np.ndarray:
    padded = np.pad(a, 1, mode="edge")
    return 0.25 * (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
    )


def _lsac(channel: np.ndarray, blend: float, tol: float, max_sweeps: int) -> np.ndarray:
    """Local space average color by damped neighbor averaging."""
    average = np.full_like(channel, channel.mean())
    for _ in range(max_sweeps):
        updated = (1.0 - blend) * _neighbor_mean(average) + blend * channel
        delta = float(np.max(np.abs(updated - average)))
        average = updated
        if delta < tol:
            break
    return average


def _block_mean(a: np.ndarray, factor: int) -> np.ndarray:
    h, w = a.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        a = np.pad(a, ((0, ph), (0, pw)), mode="edge")
    hh, ww = a.shape
    return a.reshape(hh // factor, factor, ww // factor, factor).mean(axis=(1, 3))


def _resize_bilinear(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out_h, out_w = shape
    in_h, in_w = a.shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = a[np.ix_(y0, x0)] * (1.0 - wx) + a[np.ix_(y0, x1)] * wx
    bottom = a[np.ix_(y1, x0)] * (1.0 - wx) + a[np.ix_(y1, x1)] * wx
    return (top * (1.0 - wy) + bottom * wy).astype(a.dtype)


def estimate_illumination(
    direct: Image,
    depth: DepthMap,
    blend: float = 0.01,
    scale: float = 2.0,
    tol: float = 1e-4,
    max_sweeps: int = 500,
    warn_sink: list[str] | None = None,
) -> IlluminationMap:
    """Illumination from iterated local space average color of the direct signal.

    The local average approximates half the ambient light under a gray-world
    style assumption, hence the default scale of 2. ``depth`` is part of the
    estimation interface for depth-adaptive variants; the plain averaging
    scheme here does not consume it. Megapixel inputs run the averaging
    coarse-to-fine (same fixed point, far fewer sweeps) followed by
    full-resolution polish sweeps.
    """
    require_same_shape(direct, depth)
    if float(direct.data.min()) < ILLUMINATION_FLOOR * (1.0 - 1e-9):
        raise ParameterError(
            f"direct signal must be clamped to >= {ILLUMINATION_FLOOR} before "
            "illumination estimation"
        )
    h, w = direct.shape
    channels = []
    for c in range(3):
        plane = direct.data[:, :, c].astype(np.float64)
        if h * w > _EXACT_ILLUMINATION_PIXELS:
            factor = 2
            while (h // factor) * (w // factor) > _EXACT_ILLUMINATION_PIXELS // 4:
                factor *= 2
            coarse = _lsac(_block_mean(plane, factor), blend, tol, max_sweeps)
            average = _resize_bilinear(coarse, (h, w))
            for _ in range(10):  # polish at full resolution
                average = (1.0 - blend) * _neighbor_mean(average) + blend * plane
        else:
            average = _lsac(plane, blend, tol, max_sweeps)
        channels.append(average)
    stacked = np.stack(channels, axis=2) * scale
    clipped = np.clip(stacked, ILLUMINATION_FLOOR, 1.0).astype(direct.data.dtype)
    return IlluminationMap(clipped)


# ---------------------------------------------------------------------------
# direct-attenuation refinement


def _beta_curve(mu: np.ndarray, z: np.ndarray) -> np.ndarray:
    rates = mu[1] * z
    rates2 = mu[3] * z
    return mu[0] * np.exp(np.clip(rates, -700, 700)) + mu[2] * np.exp(
        np.clip(rates2, -700, 700)
    )


def _line_fit_init(z: np.ndarray, log_ratio: np.ndarray) -> np.ndarray:
    """Map a straight-line fit of -log(E)/z against z into the two-term family."""
    design = np.stack([np.ones_like(z), z], axis=1)
    coeffs, *_ = np.linalg.lstsq(design, log_ratio, rcond=None)
    level = max(float(coeffs[0]), 1e-3)
    slope = float(coeffs[1]) / level
    slope = float(np.clip(slope, -10.0, 10.0))
    return np.array([level / 2.0, slope, level / 2.0, slope])


def refine_beta_d(
    illumination: IlluminationMap,
    depth: DepthMap,
    target: float = 0.01,
    max_outer: int = 50,
    max_samples: int = 50_000,
    warn_sink: list[str] | None = None,
) -> BetaDModel:
    """Joint refinement of the attenuation model against the illumination map.

    Alternates (a) fitting the two-term rate model to minimize the mean
    squared depth reconstruction error ||z - (-log E) / rate(z)||^2 and
    (b) re-synthesizing E = exp(-z * rate(z)) blended 50/50 with the measured
    illumination, until the depth loss drops to ``target`` or ``max_outer``
    rounds elapse. Non-negative amplitudes keep the rate >= 0 everywhere.
    """
    if illumination.shape != depth.shape:
        raise DimensionMismatchError(
            f"illumination is {illumination.shape}, depth is {depth.shape}"
        )
    if float(illumination.values.min()) <= 0.0:
        raise ParameterError("illumination must be strictly positive")

    z_flat = depth.values.ravel().astype(np.float64)
    stride = max(1, int(math.ceil(z_flat.size / max_samples)))
    z_s = z_flat[::stride]

    lower = np.array([0.0, -BETA_EXPONENT_BOUND, 0.0, -BETA_EXPONENT_BOUND])
    upper = np.array(
        [BETA_RATE_BOUND, BETA_EXPONENT_BOUND, BETA_RATE_BOUND, BETA_EXPONENT_BOUND]
    )

    span = float(z_s.max() - z_s.min())
    mu_out = np.empty((3, 4))
    for channel in range(3):
        e_meas = illumination.values[:, :, channel].ravel().astype(np.float64)[::stride]
        # Values stuck at the clamp floor carry no attenuation information.
        valid = e_meas > ILLUMINATION_FLOOR * 1.01
        if valid.sum() < 16:
            valid = np.ones_like(valid)
        zc = z_s[valid]
        e_meas_c = e_meas[valid]

        if span <= 1e-6:
            # Single-depth scenes cannot constrain a z-dependent rate.
            rate = float(
                np.clip(
                    np.median(-np.log(e_meas_c) / np.maximum(zc, 1e-6)),
                    0.0,
                    BETA_RATE_BOUND,
                )
            )
            warn_and_record(
                "constant depth map: attenuation refinement returned a constant rate",
                warn_sink,
            )
            mu_out[channel] = (rate, 0.0, 0.0, 0.0)
            continue

        safe_z = np.maximum(zc, 0.05)
        mu = _line_fit_init(safe_z, -np.log(e_meas_c) / safe_z)
        mu = np.clip(mu, lower, upper)
        e_current = e_meas_c.copy()
        for _ in range(max_outer):
            y = -np.log(e_current)

            def residual_jac(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
                e1 = np.exp(np.clip(p[1] * zc, -700, 700))
                e2 = np.exp(np.clip(p[3] * zc, -700, 700))
                rate = np.maximum(p[0] * e1 + p[2] * e2, 1e-6)
                residual = zc - y / rate
                weight = y / rate**2
                jac = np.stack(
                    [weight * e1, weight * p[0] * zc * e1, weight * e2, weight * p[2] * zc * e2],
                    axis=1,
                )
                return residual, jac

            mu = least_squares(residual_jac, mu, lower=lower, upper=upper, max_iter=60).params
            rate = np.maximum(_beta_curve(mu, zc), 1e-6)
            loss = float(np.mean((zc - y / rate) ** 2))
            if loss <= target:
                break
            e_current = 0.5 * np.exp(-zc * rate) + 0.5 * e_meas_c
            np.clip(e_current, ILLUMINATION_FLOOR, 1.0, out=e_current)
        mu_out[channel] = mu
    return BetaDModel(mu_out)


# ---------------------------------------------------------------------------
# orchestration and serialization


def estimate_waterbody(image: Image, coeffs: DepthCoeffs) -> SceneEstimate:
    """Full single-image decomposition: depth, veiling light, backscatter,
    illumination, and refined attenuation, bundled as a SceneEstimate.

    Component warnings are carried on the result's params.
    """
    sink: list[str] = []
    depth = estimate_depth(image, coeffs, warn_sink=sink)
    background = estimate_background_light(image, depth, warn_sink=sink)
    backscatter = estimate_backscatter(image, depth, background, warn_sink=sink)
    b_map = backscatter_map(backscatter, depth).astype(image.data.dtype)
    direct = Image(
        np.clip(image.data - b_map, ILLUMINATION_FLOOR, 1.0).astype(image.data.dtype)
    )
    illumination = estimate_illumination(direct, depth, warn_sink=sink)
    beta_d = refine_beta_d(illumination, depth, warn_sink=sink)
    params = WaterbodyParams(
        background=background,
        backscatter=backscatter,
        beta_d=beta_d,
        warnings=tuple(sink),
    )
    return SceneEstimate(
        image=image,
        depth=depth,
        params=params,
        backscatter_map=b_map,
        illumination=illumination,
    )


def waterbody_to_json(params: WaterbodyParams) -> dict:
    return {
        "schema": SCHEMA,
        "b_inf": [float(v) for v in params.backscatter.b_inf.b_inf],
        "beta_b": [float(v) for v in params.backscatter.beta_b],
        "residual_j": [float(v) for v in params.backscatter.residual_j],
        "residual_beta_d": [float(v) for v in params.backscatter.residual_beta_d],
        "beta_d_mu": [[float(v) for v in row] for row in params.beta_d.mu],
        "warnings": list(params.warnings),
    }


def waterbody_from_json(payload: dict) -> WaterbodyParams:
    try:
        b_inf = BackgroundLight(np.asarray(payload["b_inf"], dtype=np.float64))
        backscatter = BackscatterParams(
            b_inf=b_inf,
            beta_b=np.asarray(payload["beta_b"], dtype=np.float64),
            residual_j=np.asarray(payload["residual_j"], dtype=np.float64),
            residual_beta_d=np.asarray(payload["residual_beta_d"], dtype=np.float64),
        )
        beta_d = BetaDModel(np.asarray(payload["beta_d_mu"], dtype=np.float64))
    except KeyError as exc:
        raise ParameterError(f"waterbody JSON missing field {exc}") from exc
    return WaterbodyParams(
        background=b_inf,
        backscatter=backscatter,
        beta_d=beta_d,
        warnings=tuple(payload.get("warnings", ())),
    )


def save_waterbody(params: WaterbodyParams, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(waterbody_to_json(params), fh, indent=2)
        fh.write("\n")


def load_waterbody(path: str | Path) -> WaterbodyParams:
    with open(path, "r", encoding="utf-8") as fh:
        return waterbody_from_json(json.load(fh))
