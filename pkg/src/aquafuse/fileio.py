"""File I/O: PNG/JPEG images, 16-bit depth PNGs, and PFM depth buffers."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ParameterError
from .imaging import DepthMap, Image, linear_to_srgb, srgb_to_linear


def load_image(path: str | Path, srgb_linearize: bool = False) -> Image:
    """Decode a PNG or JPEG into a float32 Image in [0, 1]."""
    with PILImage.open(path) as pil:
        pil = pil.convert("RGB")
        arr = np.asarray(pil, dtype=np.float32) / 255.0
    img = Image(arr)
    if srgb_linearize:
        img = srgb_to_linear(img)
    return img


def save_image(image: Image, path: str | Path, srgb_delinearize: bool = False) -> None:
    """Encode an Image as PNG (default) or JPEG, chosen by file extension."""
    if srgb_delinearize:
        image = linear_to_srgb(image)
    arr = np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)
    pil = PILImage.fromarray(arr, mode="RGB")
    suffix = Path(path).suffix.lower()
    if suffix in (".jpg", ".jpeg"):
        pil.save(path, quality=95)
    else:
        pil.save(path, format="PNG")


def save_depth_png16(depth: DepthMap, path: str | Path) -> None:
    """Store a depth map as 16-bit grayscale PNG, value = round(z * 65535)."""
    arr = np.clip(np.rint(depth.values * 65535.0), 0, 65535).astype(np.uint16)
    pil = PILImage.fromarray(arr, mode="I;16")
    pil.save(path, format="PNG")


def load_depth_png16(path: str | Path) -> DepthMap:
    with PILImage.open(path) as pil:
        arr = np.asarray(pil)
    if arr.ndim != 2:
        raise ParameterError(f"{path}: expected single-channel depth PNG")
    return DepthMap(arr.astype(np.float32) / 65535.0)


def save_depth_pfm(depth: DepthMap, path: str | Path) -> None:
    """Store a depth map as grayscale PFM (float32, little-endian, scale -1.0).

    Scanlines are written bottom-to-top per the PFM convention, so files
    round-trip against other PFM readers.
    """
    values = depth.values.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(values).tobytes())


def load_depth_pfm(path: str | Path) -> DepthMap:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ParameterError(f"{path}: not a grayscale PFM file")
        dims = fh.readline().decode("ascii")
        match = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not match:
            raise ParameterError(f"{path}: malformed PFM dimension line {dims!r}")
        width, height = int(match.group(1)), int(match.group(2))
        scale = float(fh.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(fh.read(width * height * 4), dtype=dtype)
    if raw.size != width * height:
        raise ParameterError(f"{path}: truncated PFM payload")
    values = np.flipud(raw.reshape(height, width)).astype(np.float32)
    return DepthMap(np.clip(values, 0.0, 1.0))
