"""Polynomial radial correction model and homography normalization.

The correction maps a distorted point to its undistorted position::

    p_u - c = f(r_d / r0) * (p_d - c),   f(rho) = k_0 + k_1 rho + ... + k_N rho^N

with ``r_d = |p_d - c|``. Coefficients are stored for the radius normalized
by ``radius_scale`` (``r0``) so that every ``k_i`` is of order one.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import (ConvergenceError, DegenerateError, FormatError, InvertibilityError,
                     NumericalError, ProjectiveInfinityError)
from .raster import GrayImage

PathLike = Union[str, os.PathLike]

NEWTON_TOL_PX = 1e-10
NEWTON_MAX_ITER = 200


def image_center(width: int, height: int) -> tuple[float, float]:
    return (0.5 * (width - 1), 0.5 * (height - 1))


def half_diagonal(width: int, height: int) -> float:
    """Distance from the image center to a corner pixel center."""
    return 0.5 * math.hypot(width - 1, height - 1)


def corner_radius(center, width: int, height: int) -> float:
    cx, cy = center
    return max(math.hypot(x - cx, y - cy)
               for x in (0.0, width - 1.0) for y in (0.0, height - 1.0))


@dataclass(frozen=True)
class DistortionModel:
    center: tuple
    k: tuple
    radius_scale: float
    max_radius: Optional[float] = None

    def __post_init__(self):
        k = tuple(float(v) for v in self.k)
        center = (float(self.center[0]), float(self.center[1]))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius_scale", float(self.radius_scale))
        if len(k) < 1:
            raise ValueError("model needs at least k_0")
        if not all(math.isfinite(v) for v in k + center):
            raise ValueError("model parameters must be finite")
        if not k[0] > 0:
            raise ValueError(f"k_0 must be positive, got {k[0]}")
        if not self.radius_scale > 0:
            raise ValueError("radius_scale must be positive")
        rmax = self.radius_scale if self.max_radius is None else float(self.max_radius)
        self.check_invertible(rmax)

    # -- construction helpers -------------------------------------------
    @classmethod
    def identity(cls, width: int, height: int, order: int = 0) -> "DistortionModel":
        return cls(image_center(width, height), (1.0,) + (0.0,) * order,
                   half_diagonal(width, height))

    @property
    def order(self) -> int:
        return len(self.k) - 1

    def is_identity(self) -> bool:
        return self.k[0] == 1.0 and all(v == 0.0 for v in self.k[1:])

    def with_params(self, k=None, center=None, max_radius=None) -> "DistortionModel":
        return DistortionModel(self.center if center is None else center,
                               self.k if k is None else k, self.radius_scale,
                               self.max_radius if max_radius is None else max_radius)

    # -- polynomial pieces ------------------------------------------------
    def f(self, rho):
        """Correction factor at normalized radius ``rho`` (Horner)."""
        rho = np.asarray(rho, dtype=np.float64)
        acc = np.full_like(rho, self.k[-1])
        for c in reversed(self.k[:-1]):
            acc = acc * rho + c
        return acc

    def radial(self, rho):
        """Normalized undistorted radius ``rho * f(rho)``."""
        return np.asarray(rho, dtype=np.float64) * self.f(rho)

    def radial_derivative(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        acc = np.full_like(rho, len(self.k) * self.k[-1])
        for i in range(len(self.k) - 2, -1, -1):
            acc = acc * rho + (i + 1) * self.k[i]
        return acc

    def check_invertible(self, max_radius: float) -> None:
        """Raise :class:`InvertibilityError` unless the radial map increases on [0, max_radius]."""
        rho_max = max_radius / self.radius_scale
        # derivative of rho * f(rho): sum (i+1) k_i rho^i
        dcoef = np.array([(i + 1) * c for i, c in enumerate(self.k)])
        bad = []
        if len(dcoef) > 1 and np.any(dcoef[1:] != 0):
            roots = np.polynomial.polynomial.polyroots(dcoef)
            for z in roots:
                if abs(z.imag) <= 1e-9 * (1 + abs(z.real)) and 0 <= z.real <= rho_max:
                    bad.append(z.real)
        grid = np.linspace(0.0, rho_max, 4097)
        dv = self.radial_derivative(grid)
        if np.any(dv <= 0):
            bad.append(float(grid[np.argmax(dv <= 0)]))
        if bad:
            r = min(bad) * self.radius_scale
            raise InvertibilityError(
                f"radial map is not monotone: derivative vanishes at r = {r:.6g} px "
                f"(checked up to {max_radius:.6g} px)")


# ---------------------------------------------------------------------
# point maps
# ---------------------------------------------------------------------
def correct_points(m: DistortionModel, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    c = np.asarray(m.center)
    d = pts - c
    rho = np.hypot(d[..., 0], d[..., 1]) / m.radius_scale
    return c + m.f(rho)[..., None] * d


def correct_point(m: DistortionModel, p) -> tuple[float, float]:
    x, y = correct_points(m, np.asarray(p, dtype=np.float64))
    return float(x), float(y)


def _solve_radius(m: DistortionModel, rho_u: np.ndarray) -> np.ndarray:
    """Solve ``rho * f(rho) = rho_u`` by bracketed Newton iteration."""
    rho_u = np.asarray(rho_u, dtype=np.float64)
    if rho_u.size == 0:
        return rho_u.copy()
    hi_val = float(rho_u.max())
    # the model is known to be monotone up to its validation radius; go
    # beyond it only when the requested radius needs it
    hi = (m.radius_scale if m.max_radius is None else m.max_radius) / m.radius_scale
    for _ in range(256):
        if float(m.radial(hi)) >= hi_val:
            break
        hi *= 1.25
        m.check_invertible(hi * m.radius_scale)
    else:
        raise InvertibilityError("radial map does not reach the requested radius")
    lo_b = np.zeros_like(rho_u)
    hi_b = np.full_like(rho_u, hi)
    x = np.clip(rho_u, 0.0, hi)
    tol = NEWTON_TOL_PX / m.radius_scale
    for _ in range(NEWTON_MAX_ITER):
        g = m.radial(x) - rho_u
        dg = m.radial_derivative(x)
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite value while inverting the radial map")
        lo_b = np.where(g < 0, x, lo_b)
        hi_b = np.where(g > 0, x, hi_b)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - g / dg
        fallback = ~((xn >= lo_b) & (xn <= hi_b)) | ~(dg > 0)
        xn = np.where(fallback, 0.5 * (lo_b + hi_b), xn)
        xn = np.where(g == 0, x, xn)
        step = np.abs(xn - x)
        x = xn
        if np.all(step <= tol):
            return x
    raise ConvergenceError(f"radial inversion did not converge in {NEWTON_MAX_ITER} iterations")


def distort_points(m: DistortionModel, pts) -> np.ndarray:
    """Inverse of :func:`correct_points` (numerical)."""
    pts = np.asarray(pts, dtype=np.float64)
    c = np.asarray(m.center)
    d = pts - c
    rho_u = np.hypot(d[..., 0], d[..., 1]) / m.radius_scale
    rho_d = _solve_radius(m, rho_u.ravel()).reshape(rho_u.shape)
    return c + d / m.f(rho_d)[..., None]


def distort_point(m: DistortionModel, p) -> tuple[float, float]:
    x, y = distort_points(m, np.asarray(p, dtype=np.float64))
    return float(x), float(y)


# ---------------------------------------------------------------------
# homographies
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class Homography:
    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if h[2, 2] != 0:
            h = h / h[2, 2]
        if not np.all(np.isfinite(h)) or abs(np.linalg.det(h)) <= 1e-12:
            raise DegenerateError("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.h @ other.h)


def apply_homography(hom: Homography, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    h = hom.h
    x, y = pts[..., 0], pts[..., 1]
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if np.any(np.abs(w) < 1e-12):
        raise ProjectiveInfinityError("point maps to the line at infinity")
    u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
    v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    return np.stack([u, v], axis=-1)


def homography_from_points(src, dst) -> Homography:
    """Exact homography mapping four ``src`` points onto ``dst`` (h33 = 1)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly four point correspondences")
    for pts, name in ((src, "source"), (dst, "target")):
        scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-300) ** 2
        for a, b, c in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            u, v = pts[b] - pts[a], pts[c] - pts[a]
            if abs(u[0] * v[1] - u[1] * v[0]) <= 1e-9 * scale:
                raise DegenerateError(f"three {name} points are collinear")
    # normalize for conditioning, solve, undo
    def similarity(pts):
        mean = pts.mean(axis=0)
        s = math.sqrt(2) / np.mean(np.hypot(*(pts - mean).T))
        return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])

    ts, td = similarity(src), similarity(dst)
    sp = apply_homography(Homography(ts), src)
    dp = apply_homography(Homography(td), dst)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(sp, dp)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"homography system is singular: {exc}") from None
    hn = np.append(sol, 1.0).reshape(3, 3)
    return Homography(np.linalg.inv(td) @ hn @ ts)


def image_corners(width: int, height: int) -> np.ndarray:
    return np.array([[0.0, 0.0], [width - 1.0, 0.0],
                     [width - 1.0, height - 1.0], [0.0, height - 1.0]])


def normalize_homography(corrector: Callable, width: int, height: int) -> Homography:
    """Homography sending the corrected image corners back onto the originals.

    ``corrector`` maps an ``(n, 2)`` array of distorted points to corrected
    ones; a :class:`DistortionModel` is accepted directly. The corners are
    the centers of the four corner pixels.
    """
    if isinstance(corrector, DistortionModel):
        model = corrector
        corrector = lambda p: correct_points(model, p)  # noqa: E731
    corners = image_corners(width, height)
    moved = np.asarray(corrector(corners), dtype=np.float64)
    return homography_from_points(moved, corners)


# ---------------------------------------------------------------------
# images
# ---------------------------------------------------------------------
def bilinear_sample(data: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup at pixel-center coordinates; 0 outside the image."""
    h, w = data.shape
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    val = top * (1 - fy) + bot * fy
    return np.where(inside, val, 0.0)


def correct_image(m: DistortionModel, img: GrayImage,
                  homography: Optional[Homography] = None) -> GrayImage:
    """Undistort ``img`` by inverse mapping and bilinear interpolation.

    With ``homography`` the output is ``homography`` applied after the
    radial correction (see :func:`normalize_homography`).
    """
    h, w = img.height, img.width
    r_img = corner_radius(m.center, w, h)
    m.check_invertible(r_img)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.stack([xs, ys], axis=-1).reshape(-1, 2)
    if homography is not None:
        pts = apply_homography(homography.inverse(), pts)
    c = np.asarray(m.center)
    rho_u = np.hypot(*(pts - c).T) / m.radius_scale
    # beyond the corrected image-corner radius the source lies outside the frame
    reach = float(m.radial(r_img / m.radius_scale))
    ok = rho_u <= reach
    src = np.full_like(pts, -1.0)
    src[ok] = distort_points(m, pts[ok])
    out = bilinear_sample(img.data, src[:, 0], src[:, 1]).reshape(h, w)
    return GrayImage(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------
def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_model(m: DistortionModel) -> str:
    return ("radial_poly v1\n"
            f"center {_fmt(m.center[0])} {_fmt(m.center[1])}\n"
            f"radius_scale {_fmt(m.radius_scale)}\n"
            "k " + " ".join(_fmt(v) for v in m.k) + "\n")


def parse_model(text: str, max_radius: Optional[float] = None) -> DistortionModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) < 4 or lines[0] != "radial_poly v1":
        raise FormatError("model file: expected 'radial_poly v1' header and 4 lines")
    fields = {}
    for ln in lines[1:]:
        key, *vals = ln.split()
        try:
            fields[key] = [float(v) for v in vals]
        except ValueError:
            raise FormatError(f"model file: bad number on line '{ln}'") from None
    try:
        center = fields["center"]
        r0 = fields["radius_scale"]
        k = fields["k"]
    except KeyError as exc:
        raise FormatError(f"model file: missing '{exc.args[0]}' line") from None
    if len(center) != 2 or len(r0) != 1 or len(k) < 1:
        raise FormatError("model file: wrong number of values")
    return DistortionModel(tuple(center), tuple(k), r0[0], max_radius)


def write_model(m: DistortionModel, path: PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_model(m))


def read_model(path: PathLike, max_radius: Optional[float] = None) -> DistortionModel:
    with open(path, "r", encoding="ascii") as fh:
        return parse_model(fh.read(), max_radius)
