"""Synthetic scene generation and the forward image-formation renderer.

The renderer exists to verify the estimation and fusion code, so it is
written as plain per-pixel loops that share no code path with the vectorized
fusion module. Keep it that way: the moment they share exponentials, the
round-trip tests stop being evidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .fileio import (
    load_depth_pfm,
    load_image,
    save_depth_pfm,
    save_image,
)
from .imaging import DepthMap, Image, require_same_shape
from .waterbody import (
    BackgroundLight,
    BackscatterParams,
    BetaDModel,
    WaterbodyParams,
    load_waterbody,
    waterbody_to_json,
)

DIFFICULTIES = ("flat", "gradient", "textured")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """A latent image, its depth, and the ground-truth waterbody."""

    latent: Image
    depth: DepthMap
    truth: WaterbodyParams
    seed: int

    def __post_init__(self) -> None:
        require_same_shape(self.latent, self.depth)


def render(scene: SyntheticScene, noise_sigma: float = 0.0) -> Image:
    """Observed image: attenuated latent plus saturating backscatter.

    Optional Gaussian sensor noise (seeded from the scene) stresses the
    estimators; the default is noise-free.
    """
    latent = scene.latent.data
    z = scene.depth.values
    mu = scene.truth.beta_d.mu
    b_inf = scene.truth.backscatter.b_inf.b_inf
    beta_b = scene.truth.backscatter.beta_b
    height, width = z.shape
    out = np.empty((height, width, 3), dtype=latent.dtype)
    for i in range(height):
        for j in range(width):
            zv = float(z[i, j])
            for c in range(3):
                rate = mu[c, 0] * math.exp(mu[c, 1] * zv) + mu[c, 2] * math.exp(
                    mu[c, 3] * zv
                )
                direct = float(latent[i, j, c]) * math.exp(-rate * zv)
                back = b_inf[c] * (1.0 - math.exp(-beta_b[c] * zv))
                value = direct + back
                if value < 0.0:
                    value = 0.0
                elif value > 1.0:
                    value = 1.0
                out[i, j, c] = value
    if noise_sigma > 0.0:
        rng = np.random.default_rng(scene.seed ^ 0xA5A5)
        noisy = out + rng.normal(0.0, noise_sigma, out.shape)
        out = np.clip(noisy, 0.0, 1.0).astype(latent.dtype)
    return Image(out)


def _smooth_field(rng: np.random.Generator, height: int, width: int, nodes: int) -> np.ndarray:
    """Random smooth texture in [0, 1] from a bilinearly stretched coarse grid."""
    coarse = rng.random((nodes, nodes))
    ys = np.linspace(0.0, nodes - 1.0, height)
    xs = np.linspace(0.0, nodes - 1.0, width)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, nodes - 1)
    x1 = np.minimum(x0 + 1, nodes - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = coarse[np.ix_(y0, x0)] * (1 - wx) + coarse[np.ix_(y0, x1)] * wx
    bottom = coarse[np.ix_(y1, x0)] * (1 - wx) + coarse[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def _disk_mask(height: int, width: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def _rect_mask(height: int, width: int, cy: float, cx: float, hy: float, hx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)


def _sample_waterbody(rng: np.random.Generator) -> WaterbodyParams:
    """Physically plausible truth parameters: bluish-green veiling light,
    saturation rates in [0.5, 4], constant attenuation rates in [0.3, 3]."""
    green = rng.uniform(0.3, 0.7)
    blue = rng.uniform(0.3, 0.7)
    red = rng.uniform(0.05, 0.8 * max(green, blue))
    b_inf = BackgroundLight(np.array([red, green, blue]))
    beta_b = rng.uniform(0.5, 4.0, size=3)
    beta_d = BetaDModel.constant(rng.uniform(0.3, 3.0, size=3))
    return WaterbodyParams(
        background=b_inf,
        backscatter=BackscatterParams(
            b_inf=b_inf,
            beta_b=beta_b,
            residual_j=np.zeros(3),
            residual_beta_d=np.ones(3),
        ),
        beta_d=beta_d,
    )


def make_scene(
    width: int,
    height: int,
    seed: int,
    difficulty: str = "textured",
) -> SyntheticScene:
    """Deterministic procedural test scene.

    Colored shapes sit on a textured background; depth is a tilted plane with
    per-shape offsets spanning [0.05, 1.0] ("flat" keeps a constant plane to
    exercise the degenerate estimator paths). Dark occluders and a sparse
    dark-speckle field give the backscatter estimator shadowed samples at
    every depth.
    """
    if difficulty not in DIFFICULTIES:
        raise ParameterError(f"difficulty must be one of {DIFFICULTIES}")
    if width < 8 or height < 8:
        raise ParameterError(f"scene must be at least 8x8, got {width}x{height}")
    rng = np.random.default_rng(seed)
    truth = _sample_waterbody(rng)

    # depth
    if difficulty == "flat":
        depth = np.full((height, width), 0.5)
    else:
        angle = rng.uniform(0.0, 2.0 * math.pi)
        yy, xx = np.mgrid[0:height, 0:width]
        ramp = math.cos(angle) * xx / max(width - 1, 1) + math.sin(angle) * yy / max(
            height - 1, 1
        )
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
        depth = 0.15 + 0.85 * ramp

    # background texture
    base = rng.uniform(0.35, 0.65, size=3)
    amplitude = {"flat": 0.04, "gradient": 0.08, "textured": 0.15}[difficulty]
    latent = np.empty((height, width, 3))
    for c in range(3):
        field = _smooth_field(rng, height, width, nodes=6)
        tint = rng.uniform(0.5, 1.0)
        latent[:, :, c] = base[c] + amplitude * tint * (field - 0.5) * 2.0

    # colored shapes
    n_shapes = {"flat": 3, "gradient": 4, "textured": 6}[difficulty]
    min_dim = min(height, width)
    for s in range(n_shapes):
        cy = rng.uniform(0.1, 0.9) * height
        cx = rng.uniform(0.1, 0.9) * width
        size = rng.uniform(0.06, 0.16) * min_dim
        if rng.random() < 0.5:
            mask = _disk_mask(height, width, cy, cx, size)
        else:
            mask = _rect_mask(height, width, cy, cx, size, size * rng.uniform(0.6, 1.6))
        color = np.clip(base + rng.uniform(-0.25, 0.25, size=3), 0.05, 0.95)
        latent[mask] = color
        if difficulty != "flat":
            plane_z = float(depth[min(int(cy), height - 1), min(int(cx), width - 1)])
            if s == n_shapes - 1:
                shape_z = 0.05  # guarantee the near end of the depth span
            else:
                shape_z = max(0.05, plane_z - rng.uniform(0.1, 0.5))
            depth[mask] = shape_z

    if difficulty != "flat":
        # dark occluders spread across depth for backscatter identifiability
        for target_z in (0.2, 0.5, 0.8):
            cy = rng.uniform(0.15, 0.85) * height
            cx = rng.uniform(0.15, 0.85) * width
            mask = _disk_mask(height, width, cy, cx, rng.uniform(0.03, 0.06) * min_dim)
            latent[mask] = rng.uniform(0.003, 0.02, size=3)
            depth[mask] = target_z + rng.uniform(-0.05, 0.05)

    # sparse dark speckles at the local surface depth
    speckle = rng.random((height, width)) < 0.03
    latent[speckle] = rng.uniform(0.002, 0.02, size=(int(speckle.sum()), 3))

    latent = np.clip(latent, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)
    return SyntheticScene(
        latent=Image(latent),
        depth=DepthMap(depth),
        truth=truth,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# fixture directories: latent.png, depth.pfm, truth.json, rendered.png


def export_scene(scene: SyntheticScene, directory: str | Path) -> None:
    """Write the four-file fixture; the rendered image is produced here too.

    PNG quantizes the latent and rendered buffers to 8 bits; tests that need
    exact values should keep the in-memory scene.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_image(scene.latent, directory / "latent.png")
    save_depth_pfm(scene.depth, directory / "depth.pfm")
    payload = waterbody_to_json(scene.truth)
    payload["seed"] = scene.seed
    with open(directory / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    save_image(render(scene), directory / "rendered.png")


def load_scene(directory: str | Path) -> tuple[SyntheticScene, Image]:
    """Read a fixture directory back; returns the scene and its rendered image."""
    directory = Path(directory)
    latent = load_image(directory / "latent.png")
    depth = load_depth_pfm(directory / "depth.pfm")
    truth = load_waterbody(directory / "truth.json")
    with open(directory / "truth.json", "r", encoding="utf-8") as fh:
        seed = int(json.load(fh).get("seed", -1))
    rendered = load_image(directory / "rendered.png")
    scene = SyntheticScene(latent=latent, depth=depth, truth=truth, seed=seed)
    return scene, rendered
