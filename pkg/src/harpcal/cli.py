"""Command-line front end: extract, measure, calibrate, correct, synth, diagnose.

Exit status is 0 when every requested unit succeeded, 1 when any failed and
2 for usage errors.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .calib import CalibrationProblem, minimize_D, minimize_E_alternating
from .edges import DEFAULT_EDGE_SIGMA, DEFAULT_EDGE_THRESHOLD
from .errors import HarpError, ImageFormatError
from .line_support import DEFAULT_MERGE_ANGLE, DEFAULT_MERGE_GAP, DEFAULT_MERGE_OFFSET
from .metrics import rms_distance
from .model import (DistortionModel, apply_homography, corner_radius, correct_image, correct_points,
                    format_model, normalize_homography, read_model)
from .pipeline import DEFAULT_FRAME_MARGIN, DEFAULT_MIN_POINTS, ExtractConfig, extract_chains
from .raster import encode_pgm, load_image
from .resample import DEFAULT_T, HIGH_FREQ_SIGMA, format_chains, high_frequency_component, read_chains
from .synth import format_scene, harp_scene, read_scene, render, synth_chains

log = logging.getLogger("harpcal")

CHAIN_SUFFIXES = {".chains", ".txt"}
DEFAULT_ORDER = 4


class UnitError(Exception):
    """Failure of one input; reported and turned into exit status 1."""


def _atomic_write(path, data) -> None:
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fail(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _extract_config(args) -> ExtractConfig:
    return ExtractConfig(t=args.t, edge_threshold=args.edge_threshold, edge_sigma=args.edge_sigma,
                         merge_angle=math.radians(args.merge_angle), merge_gap=args.merge_gap,
                         merge_offset=args.merge_offset, min_points=args.min_points,
                         frame_margin=args.frame_margin)


def _load(path):
    if not Path(path).exists():
        raise UnitError(f"{path}: no such file")
    try:
        return load_image(path)
    except (ImageFormatError, OSError) as exc:
        raise UnitError(f"{path}: {exc}") from None


def _is_chain_file(path) -> bool:
    return Path(path).suffix.lower() in CHAIN_SUFFIXES


def _read_chain_file(path):
    if not Path(path).exists():
        raise UnitError(f"{path}: no such file")
    try:
        return read_chains(path)
    except (HarpError, ValueError, OSError) as exc:
        raise UnitError(f"{path}: {exc}") from None


def _prefixed(items):
    """Merge per-input chain lists; ids get the input index when there are several."""
    if len(items) == 1:
        return list(items[0])
    return [(f"{i}.{cid}", pts) for i, chains in enumerate(items) for cid, pts in chains]


# ---------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------
def cmd_extract(args) -> int:
    cfg = _extract_config(args)
    status = 0
    for path in args.images:
        try:
            img = _load(path)
            chains = extract_chains(img, cfg)
        except UnitError as exc:
            _fail(str(exc))
            status = 1
            continue
        out = Path(args.outdir or Path(path).parent) / (Path(path).stem + ".chains")
        if not chains:
            print(f"warning: {path}: no chains found", file=sys.stderr)
        _atomic_write(out, format_chains(chains))
        print(f"{path}: {len(chains)} chains -> {out}")
    return status


def _measure_inputs(args):
    cfg = _extract_config(args)
    per_input, sizes = [], []
    for path in args.inputs:
        if _is_chain_file(path):
            per_input.append(_read_chain_file(path))
            sizes.append(None)
        else:
            img = _load(path)
            per_input.append(extract_chains(img, cfg))
            sizes.append((img.width, img.height))
    return per_input, sizes


def cmd_measure(args) -> int:
    try:
        per_input, sizes = _measure_inputs(args)
    except UnitError as exc:
        _fail(str(exc))
        return 1
    if args.model:
        size = tuple(args.size) if args.size else next((s for s in sizes if s), None)
        if size is None:
            _fail("--size W H is required to apply a model to chain files")
            return 2
        try:
            model = read_model(args.model, max_radius=_corner_radius_for(args.model, size))
        except (HarpError, ValueError, OSError) as exc:
            _fail(f"{args.model}: {exc}")
            return 1
        hom = normalize_homography(model, *size)
        per_input = [[(cid, apply_homography(hom, correct_points(model, pts))) for cid, pts in chains]
                     for chains in per_input]
    chains = _prefixed(per_input)
    if not chains:
        _fail("no chains to measure")
        return 1
    try:
        report = rms_distance(chains)
    except (HarpError, ValueError) as exc:
        _fail(str(exc))
        return 1
    text = report.to_text()
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.plot:
        from .plotting import plot_residuals
        size = tuple(args.size) if args.size else next((s for s in sizes if s), None)
        plot_residuals(chains, report, args.plot, size)
    return 0


def _corner_radius_for(model_path, size):
    """Validation radius: farthest image corner from the model's center."""
    text = Path(model_path).read_text(encoding="ascii")
    center = None
    for ln in text.splitlines():
        parts = ln.split()
        if parts and parts[0] == "center" and len(parts) == 3:
            try:
                center = (float(parts[1]), float(parts[2]))
            except ValueError:
                center = None
    if center is None:
        return None
    return corner_radius(center, *size)


def cmd_calibrate(args) -> int:
    try:
        per_input = [_read_chain_file(p) for p in args.chains]
    except UnitError as exc:
        _fail(str(exc))
        return 1
    chains = _prefixed(per_input)
    need = 2 * (args.order + 1)
    short = [cid for cid, pts in chains if len(pts) < need]
    if short:
        print(f"warning: skipping {len(short)} chain(s) with fewer than {need} points: "
              + " ".join(short), file=sys.stderr)
        chains = [(cid, pts) for cid, pts in chains if len(pts) >= need]
    if args.size:
        size = tuple(args.size)
    elif args.image:
        img = _load(args.image)
        size = (img.width, img.height)
    else:
        _fail("--size W H or --image is required")
        return 2
    try:
        problem = CalibrationProblem(chains, args.order, args.center, size)
        if args.method == "D":
            result = minimize_D(problem)
        else:
            result = minimize_E_alternating(problem)
    except (HarpError, ValueError, ArithmeticError, RuntimeError) as exc:
        _fail(str(exc))
        return 1
    print(f"energy_initial = {result.energy_initial:.6g}")
    print(f"energy_final = {result.energy_final:.6g}")
    print(f"iterations = {result.iterations}")
    print(f"converged = {int(result.converged)}")
    _atomic_write(args.output, format_model(result.model))
    if args.log:
        _atomic_write(args.log, result.log_text())
    if args.plot:
        from .plotting import plot_energy
        plot_energy(result.history, args.plot, "D (px^2)" if args.method == "D" else "E / k0^4")
    return 0


def cmd_correct(args) -> int:
    status = 0
    for path in args.images:
        try:
            img = _load(path)
            try:
                model = read_model(args.model, max_radius=_corner_radius_for(args.model, (img.width, img.height)))
            except OSError as exc:
                raise UnitError(f"{args.model}: {exc}") from None
            hom = normalize_homography(model, img.width, img.height) if args.normalize else None
            out_img = correct_image(model, img, hom)
        except UnitError as exc:
            _fail(str(exc))
            status = 1
            continue
        except (HarpError, ValueError) as exc:
            _fail(f"{path}: {exc}")
            status = 1
            continue
        out = Path(args.outdir or Path(path).parent) / (Path(path).stem + args.suffix + ".pgm")
        _atomic_write(out, encode_pgm(out_img, args.bits))
        print(f"{path} -> {out}")
    return status


def _synth_model(args, w, h):
    if args.k is None:
        return None
    center = tuple(args.model_center) if args.model_center else ((w - 1) / 2.0, (h - 1) / 2.0)
    r0 = 0.5 * math.hypot(w - 1, h - 1)
    return DistortionModel(center, tuple(args.k), r0, max_radius=corner_radius(center, w, h))


def cmd_synth(args) -> int:
    try:
        if args.scene:
            scene = read_scene(args.scene)
        else:
            w, h = args.size
            scene = harp_scene(w, h, n_strings=args.strings, angle_deg=args.angle,
                               string_width=args.string_width, contrast=args.contrast,
                               background=args.background, distortion=_synth_model(args, w, h),
                               noise_sigma=args.noise, supersample=args.supersample, seed=args.seed)
    except (HarpError, ValueError, OSError) as exc:
        _fail(str(exc))
        return 1
    img = render(scene)
    _atomic_write(args.output, encode_pgm(img, args.bits))
    print(f"image -> {args.output}")
    if args.model_out:
        _atomic_write(args.model_out, format_model(scene.model))
    if args.scene_out:
        _atomic_write(args.scene_out, format_scene(scene))
    if args.chains_out:
        chains, _ = synth_chains(scene, args.chain_points)
        _atomic_write(args.chains_out, format_chains(chains))
    return 0


def cmd_diagnose(args) -> int:
    try:
        chains = _read_chain_file(args.chains)
    except UnitError as exc:
        _fail(str(exc))
        return 1
    if not chains:
        _fail(f"{args.chains}: no chains")
        return 1
    rows, signals = [], []
    status = 0
    for cid, pts in chains:
        try:
            sig = high_frequency_component(pts, args.sigma)
        except (HarpError, ValueError) as exc:
            _fail(f"chain {cid}: {exc}")
            status = 1
            continue
        hf = sig.high[sig.interior()]
        if hf.size == 0:
            _fail(f"chain {cid}: too short for a {args.sigma:g} px diagnostic")
            status = 1
            continue
        signals.append((cid, sig))
        rows.append(f"chain {cid} n={len(pts)} hf_rms={np.sqrt(np.mean(hf ** 2)):.6g} "
                    f"hf_max={np.max(np.abs(hf)):.6g}")
    text = "\n".join(rows) + "\n" if rows else ""
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    if args.plot and signals:
        from .plotting import plot_high_frequency
        plot_high_frequency(signals, args.plot)
    return status


# ---------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------
def _add_extract_flags(p):
    g = p.add_argument_group("extraction")
    g.add_argument("--t", type=int, default=DEFAULT_T,
                   help="smoothing/subsampling factor along chains (default: %(default)s)")
    g.add_argument("--edge-threshold", type=float, default=DEFAULT_EDGE_THRESHOLD,
                   help="minimum gradient magnitude for edge points, luminance/px (default: 5/255)")
    g.add_argument("--edge-sigma", type=float, default=DEFAULT_EDGE_SIGMA,
                   help="Gaussian pre-smoothing before edge localization, px (default: %(default)s)")
    g.add_argument("--merge-angle", type=float, default=math.degrees(DEFAULT_MERGE_ANGLE),
                   help="max direction difference to merge chains, degrees (default: %(default)g)")
    g.add_argument("--merge-gap", type=float, default=DEFAULT_MERGE_GAP,
                   help="max gap between merged chains, px (default: %(default)g)")
    g.add_argument("--merge-offset", type=float, default=DEFAULT_MERGE_OFFSET,
                   help="max lateral offset between merged chains, px (default: %(default)g)")
    g.add_argument("--min-points", type=int, default=DEFAULT_MIN_POINTS,
                   help="drop chains with fewer edge points (default: %(default)s)")
    g.add_argument("--frame-margin", type=float, default=DEFAULT_FRAME_MARGIN,
                   help="drop chains running along a frame side within this distance, px "
                        "(default: %(default)g; 0 disables)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harpcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="images -> smoothed edge chain files")
    p.add_argument("images", nargs="+")
    p.add_argument("--outdir", help="output directory (default: next to each image)")
    _add_extract_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("measure", help="straightness report from chain files or images")
    p.add_argument("inputs", nargs="+", help="chain files (.chains/.txt) or images")
    p.add_argument("--model", help="correct chains with this model, then normalize by the corner homography")
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"),
                   help="image size for normalization when measuring chain files")
    p.add_argument("-o", "--out", help="write the report here instead of stdout")
    p.add_argument("--plot", help="write a residual figure (PNG) here")
    _add_extract_flags(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("calibrate", help="estimate a radial correction from chain files")
    p.add_argument("chains", nargs="+")
    p.add_argument("-o", "--output", required=True, help="model file to write")
    p.add_argument("--method", choices=("D", "E"), default="D",
                   help="D: least squares on distances; E: alternating covariance energy (default: %(default)s)")
    p.add_argument("--order", type=int, default=DEFAULT_ORDER, help="polynomial order N (default: %(default)s)")
    p.add_argument("--center", choices=("fixed", "free"), default="fixed",
                   help="distortion center at the image center or estimated (D only) (default: %(default)s)")
    p.add_argument("--size", type=int, nargs=2, metavar=("W", "H"), help="image size in px")
    p.add_argument("--image", help="take the image size from this file")
    p.add_argument("--log", help="write the per-iteration energy log here")
    p.add_argument("--plot", help="write an energy-per-iteration figure (PNG) here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("correct", help="undistort images with a model file")
    p.add_argument("images", nargs="+")
    p.add_argument("--model", required=True)
    p.add_argument("--normalize", action="store_true",
                   help="compose the homography that keeps the image corners fixed")
    p.add_argument("--outdir", help="output directory (default: next to each image)")
    p.add_argument("--suffix", default="_corrected", help="output name suffix (default: %(default)s)")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16, help="PGM depth (default: %(default)s)")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("synth", help="render a synthetic harp photograph")
    p.add_argument("-o", "--output", required=True, help="PGM image to write")
    p.add_argument("--scene", help="scene description file (overrides the scene flags)")
    p.add_argument("--size", type=int, nargs=2, default=(1200, 800), metavar=("W", "H"),
                   help="image size (default: 1200 800)")
    p.add_argument("--strings", type=int, default=10, help="number of strings (default: %(default)s)")
    p.add_argument("--angle", type=float, default=75.0, help="string direction, degrees (default: %(default)g)")
    p.add_argument("--string-width", type=float, default=4.0, help="px (default: %(default)g)")
    p.add_argument("--contrast", type=float, default=-0.6, help="string minus background (default: %(default)g)")
    p.add_argument("--background", type=float, default=0.85, help="(default: %(default)g)")
    p.add_argument("--k", type=float, nargs="+",
                   help="correction coefficients k0 k1 ... (radii normalized by the half diagonal)")
    p.add_argument("--model-center", type=float, nargs=2, metavar=("X", "Y"),
                   help="distortion center (default: image center)")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma (default: %(default)g)")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default: %(default)s)")
    p.add_argument("--supersample", type=int, default=16,
                   help="samples per pixel side (default: %(default)s)")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16, help="PGM depth (default: %(default)s)")
    p.add_argument("--model-out", help="write the ground-truth model here")
    p.add_argument("--scene-out", help="write the scene description here")
    p.add_argument("--chains-out", help="write exact distorted center-line chains here")
    p.add_argument("--chain-points", type=int, default=500, help="points per exact chain (default: %(default)s)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("diagnose", help="high-frequency oscillation of each chain")
    p.add_argument("chains")
    p.add_argument("--sigma", type=float, default=HIGH_FREQ_SIGMA,
                   help="Gaussian separating low and high frequencies, px of arc (default: %(default)g)")
    p.add_argument("-o", "--out", help="write the report here instead of stdout")
    p.add_argument("--plot", help="write a figure (PNG) of the high-frequency signals here")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
