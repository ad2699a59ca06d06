"""Command-line frontend with deterministic file-based workflows.

Subcommands: estimate, fuse, crossover, enhance, augment, render, eval,
depth. Exit codes: 0 success, 2 usage or I/O failure, 3 partial batch
failure. All emitted JSON carries "schema": "aquafuse/v1".
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import fileio, metrics
from .depth import DepthCoeffs, estimate_depth
from .errors import AquafuseError
from .fusion import FusionConfig, clear_water_reference, crossover, fuse
from .render import DIFFICULTIES, export_scene, make_scene
from .waterbody import (
    SceneEstimate,
    WaterbodyParams,
    estimate_waterbody,
    load_waterbody,
    save_waterbody,
)

SCHEMA = "aquafuse/v1"
COEFFS_ENV_VAR = "AQUAFUSE_COEFFS"


class CliError(Exception):
    """Raised for usage and I/O failures; maps to exit code 2."""


def _resolve_coeffs(path_flag: str | None) -> DepthCoeffs:
    """Coefficient precedence: --coeffs flag, then AQUAFUSE_COEFFS, then the
    packaged defaults (fit on the built-in synthetic scene family)."""
    path = path_flag or os.environ.get(COEFFS_ENV_VAR)
    if path is None:
        from .depth import default_coeffs

        return default_coeffs()
    if not Path(path).is_file():
        raise CliError(f"coeffs not found: {path}")
    try:
        return DepthCoeffs.load(path)
    except (OSError, json.JSONDecodeError, AquafuseError) as exc:
        raise CliError(f"cannot read coeffs {path}: {exc}") from exc


def _load_image(path: str, srgb: bool):
    if not Path(path).is_file():
        raise CliError(f"input not found: {path}")
    try:
        return fileio.load_image(path, srgb_linearize=srgb)
    except (OSError, AquafuseError) as exc:
        raise CliError(f"cannot decode {path}: {exc}") from exc


def _fusion_config(args: argparse.Namespace) -> FusionConfig:
    try:
        return FusionConfig(
            alpha=args.alpha,
            theta=math.radians(args.theta_deg),
            clamp_mode=args.clamp,
        )
    except AquafuseError as exc:
        raise CliError(str(exc)) from exc


def _estimate(path: str, args: argparse.Namespace) -> SceneEstimate:
    image = _load_image(path, args.srgb_linearize)
    coeffs = _resolve_coeffs(args.coeffs)
    try:
        return estimate_waterbody(image, coeffs)
    except AquafuseError as exc:
        raise CliError(f"estimation failed for {path}: {exc}") from exc


def _reference_params(path: str, args: argparse.Namespace) -> WaterbodyParams:
    """A reference is either a waterbody JSON or an image to estimate."""
    if path.endswith(".json"):
        if not Path(path).is_file():
            raise CliError(f"reference not found: {path}")
        try:
            return load_waterbody(path)
        except (OSError, json.JSONDecodeError, AquafuseError) as exc:
            raise CliError(f"cannot read waterbody {path}: {exc}") from exc
    return _estimate(path, args).params


def _print_report(report: metrics.MetricReport) -> None:
    print(json.dumps(report.to_json()))


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(args: argparse.Namespace) -> int:
    scene = _estimate(args.image, args)
    save_waterbody(scene.params, args.output)
    if args.emit_depth:
        fileio.save_depth_pfm(scene.depth, args.emit_depth)
    return 0


def cmd_depth(args: argparse.Namespace) -> int:
    image = _load_image(args.image, args.srgb_linearize)
    coeffs = _resolve_coeffs(args.coeffs)
    depth = estimate_depth(image, coeffs)
    base = Path(args.output)
    fileio.save_depth_pfm(depth, base.with_suffix(".pfm"))
    fileio.save_depth_png16(depth, base.with_suffix(".png"))
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    scene = _estimate(args.image, args)
    reference = _reference_params(args.reference, args)
    fused = fuse(scene, reference, _fusion_config(args))
    fileio.save_image(fused, args.output, srgb_delinearize=args.srgb_linearize)
    _print_report(metrics.compare(fused, scene.image))
    return 0


def cmd_enhance(args: argparse.Namespace) -> int:
    scene = _estimate(args.image, args)
    if args.reference:
        reference = _reference_params(args.reference, args)
    else:
        reference = clear_water_reference()
    fused = fuse(scene, reference, _fusion_config(args))
    fileio.save_image(fused, args.output, srgb_delinearize=args.srgb_linearize)
    _print_report(metrics.compare(fused, scene.image))
    return 0


def cmd_crossover(args: argparse.Namespace) -> int:
    scene_a = _estimate(args.image_a, args)
    scene_b = _estimate(args.image_b, args)
    out_ab, out_ba = crossover(scene_a, scene_b, _fusion_config(args))
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem_a = Path(args.image_a).stem
    stem_b = Path(args.image_b).stem
    fileio.save_image(out_ab, out_dir / f"{stem_a}__{stem_b}.png",
                      srgb_delinearize=args.srgb_linearize)
    fileio.save_image(out_ba, out_dir / f"{stem_b}__{stem_a}.png",
                      srgb_delinearize=args.srgb_linearize)
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    try:
        scene = make_scene(args.width, args.height, args.seed, args.difficulty)
    except AquafuseError as exc:
        raise CliError(str(exc)) from exc
    try:
        export_scene(scene, args.output_dir)
    except OSError as exc:
        raise CliError(f"cannot write fixture to {args.output_dir}: {exc}") from exc
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    image_a = _load_image(args.image_a, args.srgb_linearize)
    image_b = _load_image(args.image_b, args.srgb_linearize)
    depth_a = depth_b = None
    if bool(args.depth_a) != bool(args.depth_b):
        raise CliError("supply both --depth-a and --depth-b or neither")
    if args.depth_a:
        try:
            depth_a = fileio.load_depth_pfm(args.depth_a)
            depth_b = fileio.load_depth_pfm(args.depth_b)
        except (OSError, AquafuseError) as exc:
            raise CliError(f"cannot read depth maps: {exc}") from exc
    try:
        report = metrics.compare(image_a, image_b, depth_a, depth_b)
    except AquafuseError as exc:
        raise CliError(str(exc)) from exc
    _print_report(report)
    return 0


# ---------------------------------------------------------------------------
# batch augmentation


def _read_manifest(path: str) -> dict:
    if not Path(path).is_file():
        raise CliError(f"manifest not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read manifest {path}: {exc}") from exc
    for key in ("inputs", "references", "output_dir"):
        if key not in manifest:
            raise CliError(f"manifest missing required field '{key}'")
    return manifest


def cmd_augment(args: argparse.Namespace) -> int:
    manifest = _read_manifest(args.manifest)
    inputs: list[str] = list(manifest["inputs"])
    references: list[str] = list(manifest["references"])
    out_dir = Path(manifest["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    config_fields = manifest.get("config", {})
    ns = argparse.Namespace(
        alpha=config_fields.get("alpha", args.alpha),
        theta_deg=config_fields.get("theta_deg", args.theta_deg),
        clamp=config_fields.get("clamp", args.clamp),
        coeffs=config_fields.get("coeffs", args.coeffs),
        srgb_linearize=args.srgb_linearize,
    )
    config = _fusion_config(ns)
    jobs = max(1, args.jobs or os.cpu_count() or 1)

    scenes: dict[str, SceneEstimate] = {}
    refs: dict[str, WaterbodyParams] = {}
    failures: list[dict] = []

    def prep_input(path: str) -> None:
        scenes[path] = _estimate(path, ns)

    def prep_reference(path: str) -> None:
        refs[path] = _reference_params(path, ns)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        input_futures = {p: pool.submit(prep_input, p) for p in dict.fromkeys(inputs)}
        ref_futures = {p: pool.submit(prep_reference, p) for p in dict.fromkeys(references)}
    for path, future in input_futures.items():
        exc = future.exception()
        if exc is not None:
            for ref in references:
                failures.append({"input": path, "reference": ref, "error": str(exc)})
    for path, future in ref_futures.items():
        exc = future.exception()
        if exc is not None:
            for inp in inputs:
                if inp in scenes:
                    failures.append({"input": inp, "reference": path, "error": str(exc)})

    records: list[dict] = []

    def run_pair(input_path: str, ref_path: str) -> dict:
        start = time.perf_counter()
        scene = scenes[input_path]
        fused = fuse(scene, refs[ref_path], config)
        name = f"{Path(input_path).stem}__{Path(ref_path).stem}.png"
        out_path = out_dir / name
        fileio.save_image(fused, out_path, srgb_delinearize=args.srgb_linearize)
        report = metrics.compare(fused, scene.image)
        return {
            "input": input_path,
            "reference": ref_path,
            "output": str(out_path),
            "warnings": list(scene.params.warnings),
            "metrics": report.to_json(),
            "wall_time_s": time.perf_counter() - start,
        }

    pairs = [
        (inp, ref)
        for inp in inputs
        for ref in references
        if inp in scenes and ref in refs
    ]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pair: pool.submit(run_pair, *pair) for pair in pairs}
    for (inp, ref), future in futures.items():
        exc = future.exception()
        if exc is not None:
            failures.append({"input": inp, "reference": ref, "error": str(exc)})
        else:
            records.append(future.result())

    if manifest.get("emit_depth"):
        for path, scene in scenes.items():
            fileio.save_depth_pfm(scene.depth, out_dir / f"{Path(path).stem}__depth.pfm")
    if manifest.get("emit_params"):
        for path, scene in scenes.items():
            save_waterbody(scene.params, out_dir / f"{Path(path).stem}__waterbody.json")

    records.sort(key=lambda r: (r["input"], r["reference"]))
    failures.sort(key=lambda r: (r["input"], r["reference"]))
    record_payload = {"schema": SCHEMA, "records": records, "failures": failures}
    with open(out_dir / "run_record.json", "w", encoding="utf-8") as fh:
        json.dump(record_payload, fh, indent=2)
        fh.write("\n")
    return 3 if failures else 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--coeffs", help="depth coefficient JSON (overrides "
                        f"${COEFFS_ENV_VAR} and the packaged defaults)")
    shared.add_argument("--alpha", type=float, default=1.0,
                        help="veiling-light scale factor (default 1.0)")
    shared.add_argument("--theta-deg", type=float, default=0.0,
                        help="incident light angle in degrees (default 0)")
    shared.add_argument("--clamp", choices=["clip", "rescale"], default="clip",
                        help="out-of-range handling for fused images")
    shared.add_argument("--seed", type=int, default=0,
                        help="seed for synthetic rendering")
    shared.add_argument("--jobs", type=int, default=None,
                        help="worker pool size for batch commands")
    shared.add_argument("--srgb-linearize", action="store_true",
                        help="convert sRGB to linear on load (and back on save)")

    parser = argparse.ArgumentParser(
        prog="aquafuse",
        description="Physics-based waterbody estimation, fusion, and rendering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[shared],
                       help="estimate waterbody parameters from one image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True, help="waterbody JSON path")
    p.add_argument("--emit-depth", help="also write the estimated depth as PFM")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("depth", parents=[shared],
                       help="estimate depth; writes <output>.pfm and <output>.png")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True, help="output base path")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("fuse", parents=[shared],
                       help="fuse a reference waterbody into an input image")
    p.add_argument("image")
    p.add_argument("reference", help="reference image or waterbody JSON")
    p.add_argument("-o", "--output", required=True, help="fused PNG path")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("enhance", parents=[shared],
                       help="fuse with a clear-water reference (dewatered look)")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True, help="output PNG path")
    p.add_argument("--reference", help="override the built-in clear reference")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("crossover", parents=[shared],
                       help="swap the waterbodies of two images (two outputs)")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("-o", "--output-dir", required=True)
    p.set_defaults(func=cmd_crossover)

    p = sub.add_parser("augment", parents=[shared],
                       help="batch fusion over an inputs x references manifest")
    p.add_argument("manifest", help="JSON manifest path")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("render", parents=[shared],
                       help="write a synthetic fixture directory")
    p.add_argument("-o", "--output-dir", required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--difficulty", choices=list(DIFFICULTIES), default="textured")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[shared],
                       help="PSNR/SSIM (and depth RMSE) between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--depth-a", help="PFM depth for image_a")
    p.add_argument("--depth-b", help="PFM depth for image_b")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"aquafuse: {exc}", file=sys.stderr)
        return 2
    except AquafuseError as exc:
        print(f"aquafuse: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
