"""Closed-form waterbody fusion: restoration, modulation, fusion, crossover.

Fusion keeps the input scene's depth, geometry, and direct signal intact and
replaces only the additive backscatter, synthesized from the reference
waterbody's veiling light. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .imaging import Image
from .waterbody import (
    BackgroundLight,
    BackscatterParams,
    BetaDModel,
    SceneEstimate,
    WaterbodyParams,
)

CLAMP_MODES = ("clip", "rescale")


@dataclass(frozen=True)
class FusionConfig:
    """Knobs of the fusion step.

    alpha scales the transferred veiling light; theta is the incident light
    angle in radians (0 = overhead sun, the neutral default). clamp_mode
    "clip" truncates to [0, 1], "rescale" divides by the maximum when it
    exceeds 1 to preserve relative radiance.
    """

    alpha: float = 1.0
    theta: float = 0.0
    clamp_mode: str = "clip"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ParameterError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (0.0 <= self.theta < math.pi / 2):
            raise ParameterError(f"theta must lie in [0, pi/2), got {self.theta}")
        if self.clamp_mode not in CLAMP_MODES:
            raise ParameterError(f"clamp_mode must be one of {CLAMP_MODES}")

    @property
    def cos_theta(self) -> float:
        return math.cos(self.theta)


def _clamp(values: np.ndarray, mode: str) -> np.ndarray:
    if mode == "rescale":
        peak = float(values.max())
        if peak > 1.0:
            values = values / peak
        return np.clip(values, 0.0, 1.0)
    return np.clip(values, 0.0, 1.0)


def restore(scene: SceneEstimate) -> Image:
    """Latent scene: subtract backscatter, invert the exponential attenuation.

    Negative residuals after subtraction are unphysical and clamp to zero
    before amplification.
    """
    z = scene.depth.values
    rate = scene.params.beta_d.evaluate(z)
    direct = np.maximum(scene.image.data - scene.backscatter_map, 0.0)
    latent = direct * np.exp(rate * z[..., None])
    return Image(np.clip(latent, 0.0, 1.0).astype(scene.image.data.dtype))


def depth_factor(scene: SceneEstimate) -> np.ndarray:
    """Per-channel decay factor exp(-beta_b * z); 1 exactly where z = 0."""
    z = scene.depth.values[..., None]
    return np.exp(-scene.params.backscatter.beta_b * z)


def modulate_backscatter(scene: SceneEstimate, config: FusionConfig) -> np.ndarray:
    """Backscatter scaled by the depth factor and the incident-angle cosine."""
    return scene.backscatter_map * depth_factor(scene) * config.cos_theta


def fused_backscatter(
    scene: SceneEstimate,
    reference: WaterbodyParams,
    config: FusionConfig,
) -> np.ndarray:
    """The injected backscatter: the reference veiling light factored through
    the input scene's depth structure.

    Only the reference's veiling light transfers; the saturation geometry
    stays the input's own.
    """
    z = scene.depth.values[..., None]
    decay = np.exp(-scene.params.backscatter.beta_b * z)
    scaled_light = config.alpha * reference.b_inf * decay * config.cos_theta
    return scaled_light * (1.0 - decay)


def fuse(
    scene: SceneEstimate,
    reference: WaterbodyParams,
    config: FusionConfig = FusionConfig(),
) -> Image:
    """Replace the scene's waterbody with one synthesized from the reference.

    Output = latent * exp(-rate(z) * z) + fused backscatter, clamped per the
    config. Dimensions and the input depth map are never modified.
    """
    z = scene.depth.values
    latent = restore(scene)
    rate = scene.params.beta_d.evaluate(z)
    direct = latent.data * np.exp(-rate * z[..., None])
    fused = direct + fused_backscatter(scene, reference, config)
    return Image(_clamp(fused, config.clamp_mode).astype(scene.image.data.dtype))


def crossover(
    scene_a: SceneEstimate,
    scene_b: SceneEstimate,
    config: FusionConfig = FusionConfig(),
) -> tuple[Image, Image]:
    """Mutual fusion of two scenes' waterbodies; two outputs per input pair."""
    return (
        fuse(scene_a, scene_b.params, config),
        fuse(scene_b, scene_a.params, config),
    )


def clear_water_reference() -> WaterbodyParams:
    """Built-in near-transparent waterbody used by the enhancement operation."""
    b_inf = BackgroundLight(np.array([0.02, 0.02, 0.02]))
    return WaterbodyParams(
        background=b_inf,
        backscatter=BackscatterParams(
            b_inf=b_inf,
            beta_b=np.array([0.1, 0.1, 0.1]),
            residual_j=np.zeros(3),
            residual_beta_d=np.ones(3),
        ),
        beta_d=BetaDModel.constant([0.05, 0.05, 0.05]),
    )


def enhance(
    scene: SceneEstimate,
    clear_reference: WaterbodyParams | None = None,
    config: FusionConfig = FusionConfig(),
) -> Image:
    """Fuse against a clear-water reference, yielding a dewatered-looking image."""
    reference = clear_reference if clear_reference is not None else clear_water_reference()
    return fuse(scene, reference, config)
