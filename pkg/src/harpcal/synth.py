"""Synthetic harp photographs and point chains with exact ground truth.

Strings are straight bands in the undistorted plane. A rendered pixel at
distorted position ``p`` shows whatever lies at ``correct_points(model, p)``,
so the image carries exactly the distortion that ``model`` corrects.
Anti-aliasing is plain supersampling; pixels far from every band edge are
resolved from their center alone, which gives the same result as the full
supersampled average.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import FormatError
from .model import DistortionModel, corner_radius, correct_points, distort_points, half_diagonal, image_center
from .raster import GrayImage

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class HarpString:
    point: tuple
    direction: tuple
    width: float = 4.0
    contrast: float = -0.6

    def __post_init__(self):
        dx, dy = (float(v) for v in self.direction)
        norm = math.hypot(dx, dy)
        if norm == 0:
            raise ValueError("string direction must be non-zero")
        if self.width < 1:
            raise ValueError("string width must be at least 1 px")
        object.__setattr__(self, "direction", (dx / norm, dy / norm))
        object.__setattr__(self, "point", (float(self.point[0]), float(self.point[1])))

    @property
    def normal(self):
        dx, dy = self.direction
        return (-dy, dx)

    def offset(self, pts: np.ndarray) -> np.ndarray:
        nx, ny = self.normal
        return (pts[..., 0] - self.point[0]) * nx + (pts[..., 1] - self.point[1]) * ny


@dataclass(frozen=True)
class HarpScene:
    width: int
    height: int
    strings: tuple
    background: float = 0.85
    distortion: Optional[DistortionModel] = None
    noise_sigma: float = 0.0
    supersample: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strings", tuple(self.strings))
        if self.supersample < 1:
            raise ValueError("supersample must be >= 1")

    @property
    def model(self) -> DistortionModel:
        if self.distortion is None:
            return DistortionModel.identity(self.width, self.height)
        return self.distortion


def harp_scene(width: int = 1200, height: int = 800, n_strings: int = 10,
               angle_deg: float = 75.0, string_width: float = 4.0,
               contrast: float = -0.6, background: float = 0.85,
               distortion: Optional[DistortionModel] = None, noise_sigma: float = 0.0,
               supersample: int = 16, seed: int = 0, fill: float = 0.9) -> HarpScene:
    """Evenly spaced parallel strings crossing the whole frame.

    ``angle_deg`` is the string direction measured from the x axis; the
    strings are spread across ``fill`` of the frame's extent along their
    normal, centered on the image center.
    """
    a = math.radians(angle_deg)
    d = (math.cos(a), math.sin(a))
    n = (-d[1], d[0])
    extent = abs(width * n[0]) + abs(height * n[1])
    spacing = fill * extent / n_strings
    cx, cy = image_center(width, height)
    strings = []
    for i in range(n_strings):
        off = (i - 0.5 * (n_strings - 1)) * spacing
        strings.append(HarpString((cx + off * n[0], cy + off * n[1]), d, string_width, contrast))
    return HarpScene(width, height, tuple(strings), background, distortion,
                     noise_sigma, supersample, seed)


def _max_stretch(model: DistortionModel, width: int, height: int) -> float:
    rho = np.linspace(0.0, corner_radius(model.center, width, height) / model.radius_scale, 2049)
    return float(max(np.max(np.abs(model.f(rho))), np.max(np.abs(model.radial_derivative(rho)))))


def _shade(scene: HarpScene, undist: np.ndarray) -> np.ndarray:
    val = np.full(undist.shape[:-1], scene.background)
    for s in reversed(scene.strings):
        inside = np.abs(s.offset(undist)) <= 0.5 * s.width
        val = np.where(inside, scene.background + s.contrast, val)
    return val


def render(scene: HarpScene, width: Optional[int] = None, height: Optional[int] = None) -> GrayImage:
    width = scene.width if width is None else width
    height = scene.height if height is None else height
    model = scene.model
    ss = int(scene.supersample)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    centers = np.stack([xs, ys], axis=-1).reshape(-1, 2)
    undist = correct_points(model, centers)
    img = _shade(scene, undist)
    # pixels whose footprint may straddle a band edge
    margin = (math.sqrt(0.5) * _max_stretch(model, width, height)) * 1.05 + 1e-9
    near = np.zeros(len(centers), dtype=bool)
    for s in scene.strings:
        near |= np.abs(np.abs(s.offset(undist)) - 0.5 * s.width) <= margin
    idx = np.flatnonzero(near)
    if ss > 1 and idx.size:
        offs = (np.arange(ss) + 0.5) / ss - 0.5
        acc = np.zeros(idx.size)
        base = centers[idx]
        for oy in offs:
            for ox in offs:
                sub = correct_points(model, base + (ox, oy))
                acc += _shade(scene, sub)
        img[idx] = acc / (ss * ss)
    img = img.reshape(height, width)
    if scene.noise_sigma > 0:
        rng = np.random.default_rng(scene.seed)
        img = img + rng.normal(0.0, scene.noise_sigma, img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0))


def _clip_line(point, direction, width, height, margin):
    """Parameter interval of ``point + t * direction`` inside the shrunk frame."""
    lo, hi = -math.inf, math.inf
    bounds = ((margin, width - 1 - margin), (margin, height - 1 - margin))
    for axis in (0, 1):
        p, d = point[axis], direction[axis]
        a, b = bounds[axis]
        if abs(d) < 1e-15:
            if not a <= p <= b:
                return None
            continue
        t0, t1 = (a - p) / d, (b - p) / d
        lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
    return (lo, hi) if hi > lo else None


def synth_chains(scene: HarpScene, points_per_string: int = 500, edges: bool = False,
                 margin: float = 2.0):
    """Distorted point chains of the scene's straight lines.

    Returns ``(chains, model)``: ``chains`` lists ``(id, points)`` with
    points sampled uniformly on each string's center line (or on both band
    edges with ``edges=True``), clipped to the frame and then mapped through
    the inverse correction.
    """
    model = scene.model
    chains = []
    for i, s in enumerate(scene.strings):
        offsets = [(f"{i}", 0.0)] if not edges else [(f"{i}a", -0.5 * s.width), (f"{i}b", 0.5 * s.width)]
        for cid, off in offsets:
            p = (s.point[0] + off * s.normal[0], s.point[1] + off * s.normal[1])
            span = _clip_line(p, s.direction, scene.width, scene.height, margin)
            if span is None:
                continue
            t = np.linspace(span[0], span[1], points_per_string)
            und = np.column_stack([p[0] + t * s.direction[0], p[1] + t * s.direction[1]])
            chains.append((cid, distort_points(model, und)))
    return chains, model


def visible_chains(scene: HarpScene, step: float = 1.0, border: float = 3.0):
    """Dense band-edge curves restricted to the distorted frame.

    Used as the analytic expectation of what edge extraction should see.
    """
    model = scene.model
    out = []
    reach = 0.1 * max(scene.width, scene.height)
    for i, s in enumerate(scene.strings):
        for tag, off in (("a", -0.5 * s.width), ("b", 0.5 * s.width)):
            p = (s.point[0] + off * s.normal[0], s.point[1] + off * s.normal[1])
            span = _clip_line(p, s.direction, scene.width, scene.height, -reach)
            if span is None:
                continue
            t = np.arange(span[0], span[1], step)
            und = np.column_stack([p[0] + t * s.direction[0], p[1] + t * s.direction[1]])
            dis = distort_points(model, und)
            keep = ((dis[:, 0] >= border) & (dis[:, 0] <= scene.width - 1 - border)
                    & (dis[:, 1] >= border) & (dis[:, 1] <= scene.height - 1 - border))
            if keep.sum() >= 2:
                out.append((f"{i}{tag}", dis[keep]))
    return out


# ---------------------------------------------------------------------
# scene text format
# ---------------------------------------------------------------------
def format_scene(scene: HarpScene) -> str:
    g = lambda v: format(float(v), ".17g")  # noqa: E731
    rows = [f"width {scene.width}", f"height {scene.height}",
            f"background {g(scene.background)}", f"noise_sigma {g(scene.noise_sigma)}",
            f"supersample {scene.supersample}", f"seed {scene.seed}"]
    if scene.distortion is not None:
        m = scene.distortion
        rows += [f"center {g(m.center[0])} {g(m.center[1])}",
                 f"radius_scale {g(m.radius_scale)}",
                 "k " + " ".join(g(v) for v in m.k)]
    for s in scene.strings:
        rows.append(f"string {g(s.point[0])} {g(s.point[1])} {g(s.direction[0])} "
                    f"{g(s.direction[1])} {g(s.width)} {g(s.contrast)}")
    return "\n".join(rows) + "\n"


def parse_scene(text: str) -> HarpScene:
    kv = {}
    strings = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            nums = [float(v) for v in vals]
        except ValueError:
            raise FormatError(f"scene line {no}: bad number") from None
        if key == "string":
            if len(nums) != 6:
                raise FormatError(f"scene line {no}: 'string x y dx dy width contrast'")
            strings.append(HarpString(nums[0:2], nums[2:4], nums[4], nums[5]))
        else:
            kv[key] = nums
    try:
        width, height = int(kv["width"][0]), int(kv["height"][0])
    except KeyError as exc:
        raise FormatError(f"scene: missing '{exc.args[0]}'") from None
    model = None
    if "k" in kv:
        center = kv.get("center", image_center(width, height))
        r0 = kv.get("radius_scale", [half_diagonal(width, height)])[0]
        model = DistortionModel(tuple(center), tuple(kv["k"]), r0,
                                corner_radius(center, width, height))
    return HarpScene(width, height, tuple(strings),
                     background=kv.get("background", [0.85])[0],
                     distortion=model,
                     noise_sigma=kv.get("noise_sigma", [0.0])[0],
                     supersample=int(kv.get("supersample", [16])[0]),
                     seed=int(kv.get("seed", [0])[0]))


def read_scene(path: PathLike) -> HarpScene:
    with open(path, "r", encoding="ascii") as fh:
        return parse_scene(fh.read())


def write_scene(scene: HarpScene, path: PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_scene(scene))
