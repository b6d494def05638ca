"""Orthogonal regression lines and the two straightness measures.

``d``     RMS of signed point-to-line distances over every point of every line.
``d_max`` RMS over lines of each line's signed-distance range (max - min).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError


@dataclass(frozen=True)
class RegressionLine:
    """Line ``alpha * x + beta * y - gamma = 0`` with unit normal (alpha, beta)."""

    alpha: float
    beta: float
    gamma: float
    theta: float

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.alpha, self.beta])

    @property
    def direction(self) -> np.ndarray:
        return np.array([self.beta, -self.alpha])


@dataclass(frozen=True)
class LineFitStats:
    A_x: float
    A_y: float
    V_xx: float
    V_xy: float
    V_yy: float
    n: int
    isotropic: bool = False


def line_moments(points) -> LineFitStats:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    ax, ay = pts.mean(axis=0)
    dx = pts[:, 0] - ax
    dy = pts[:, 1] - ay
    return LineFitStats(A_x=float(ax), A_y=float(ay), V_xx=float(np.mean(dx * dx)),
                        V_xy=float(np.mean(dx * dy)), V_yy=float(np.mean(dy * dy)), n=n)


def fit_regression_line(points) -> tuple[RegressionLine, LineFitStats]:
    """Total least squares line through ``points``.

    Solves ``tan 2 theta = -2 V_xy / (V_xx - V_yy)`` and keeps whichever of
    ``theta`` and ``theta + pi/2`` gives the smaller sum of squared signed
    distances. An isotropic cloud (``V_xx == V_yy``, ``V_xy == 0``) has no
    preferred orientation; ``theta = 0`` is returned and the stats are
    flagged ``isotropic``.

    Raises
    ------
    DegenerateError
        Fewer than two points or all points coincident.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise DegenerateError(f"line fit needs at least 2 points, got {len(pts)}")
    st = line_moments(pts)
    scale = st.V_xx + st.V_yy
    if not scale > 0.0:
        raise DegenerateError("line fit: all points coincide")
    isotropic = (abs(st.V_xx - st.V_yy) <= 1e-15 * scale
                 and abs(st.V_xy) <= 1e-15 * scale)
    if isotropic:
        theta = 0.0
    else:
        t0 = 0.5 * math.atan2(-2.0 * st.V_xy, st.V_xx - st.V_yy)

        def spread(t):
            s, c = math.sin(t), math.cos(t)
            return s * s * st.V_xx + 2.0 * s * c * st.V_xy + c * c * st.V_yy

        t1 = t0 + 0.5 * math.pi
        theta = t0 if spread(t0) <= spread(t1) else t1
    st = LineFitStats(st.A_x, st.A_y, st.V_xx, st.V_xy, st.V_yy, st.n, isotropic)
    alpha, beta = math.sin(theta), math.cos(theta)
    gamma = st.A_x * alpha + st.A_y * beta
    return RegressionLine(alpha, beta, gamma, theta), st


def signed_distances(line: RegressionLine, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return line.alpha * pts[:, 0] + line.beta * pts[:, 1] - line.gamma


@dataclass(frozen=True)
class LineReport:
    id: str
    n: int
    rms: float
    range: float


@dataclass(frozen=True)
class MeasurementReport:
    d: float
    d_max: float
    per_line: list = field(default_factory=list)
    N_T: int = 0
    L: int = 0
    warnings: list = field(default_factory=list)

    def to_text(self) -> str:
        return format_report(self)


def _chain_items(chains) -> list[tuple[str, np.ndarray]]:
    if isinstance(chains, dict):
        items = list(chains.items())
    else:
        items = []
        for i, c in enumerate(chains):
            if isinstance(c, tuple) and len(c) == 2 and isinstance(c[0], str):
                items.append(c)
            else:
                items.append((str(i), c))
    return [(str(k), np.asarray(v, dtype=np.float64).reshape(-1, 2)) for k, v in items]


def rms_distance(chains) -> MeasurementReport:
    """Fit each chain and aggregate ``d`` and ``d_max``.

    ``chains`` may be a sequence of ``(n, 2)`` point arrays, a sequence of
    ``(id, points)`` pairs or a mapping ``id -> points``.
    """
    items = _chain_items(chains)
    per_line = []
    sum_sq = 0.0
    sum_range_sq = 0.0
    n_total = 0
    notes = []
    for cid, pts in items:
        try:
            line, st = fit_regression_line(pts)
        except DegenerateError as exc:
            raise DegenerateError(f"chain {cid}: {exc}") from None
        if st.isotropic:
            notes.append(f"chain {cid}: isotropic point cloud, orientation set to theta=0")
        s = signed_distances(line, pts)
        ss = float(np.dot(s, s))
        rng = float(s.max() - s.min())
        per_line.append(LineReport(cid, len(pts), math.sqrt(ss / len(pts)), rng))
        sum_sq += ss
        sum_range_sq += rng * rng
        n_total += len(pts)
    n_lines = len(per_line)
    if n_lines == 0:
        return MeasurementReport(0.0, 0.0, [], 0, 0, ["no lines"])
    return MeasurementReport(d=math.sqrt(sum_sq / n_total),
                             d_max=math.sqrt(sum_range_sq / n_lines),
                             per_line=per_line, N_T=n_total, L=n_lines, warnings=notes)


def max_error(chains) -> float:
    return rms_distance(chains).d_max


def format_report(report: MeasurementReport) -> str:
    lines = [f"d_rms = {report.d:.6g}",
             f"d_max = {report.d_max:.6g}",
             f"lines = {report.L}",
             f"points = {report.N_T}"]
    for w in report.warnings:
        lines.append(f"# warning: {w}")
    for row in report.per_line:
        lines.append(f"line {row.id} n={row.n} rms={row.rms:.6g} range={row.range:.6g}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> MeasurementReport:
    head = {}
    per_line = []
    notes = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("# warning: "):
            notes.append(line[len("# warning: "):])
        elif line.startswith("line "):
            parts = line.split()
            kv = dict(p.split("=", 1) for p in parts[2:])
            per_line.append(LineReport(parts[1], int(kv["n"]), float(kv["rms"]), float(kv["range"])))
        elif "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            head[k] = v
    return MeasurementReport(d=float(head["d_rms"]), d_max=float(head["d_max"]),
                             per_line=per_line, N_T=int(head["points"]), L=int(head["lines"]),
                             warnings=notes)
