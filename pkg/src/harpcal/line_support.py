"""Line support regions (LSD) and grouping of sub-pixel edge points.

The region detector follows the published LSD procedure: pixels are
visited by decreasing gradient magnitude, regions grow over 8-connected
neighbors whose level-line angle stays within ``tau`` of the running
region angle, each region is approximated by a rectangle and kept only
when its number of false alarms is at most 1. LSD runs here at the input
scale (no 0.8 Gaussian sub-sampling).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.stats import binom

from .edges import EdgePoints, GradientField
from .metrics import fit_regression_line

TAU = math.pi / 8          # 22.5 degrees
QUANT = 2.0 / 255.0
DENSITY_TH = 0.7
LOG_EPS = 0.0
N_PRECISIONS = 11

DEFAULT_MERGE_ANGLE = math.radians(3.0)
DEFAULT_MERGE_GAP = 100.0
DEFAULT_MERGE_OFFSET = 3.0

_NEIGHBORS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]


@dataclass(frozen=True)
class Rect:
    x1: float
    y1: float
    x2: float
    y2: float
    width: float
    cx: float
    cy: float
    theta: float
    prec: float
    p: float

    @property
    def dx(self):
        return math.cos(self.theta)

    @property
    def dy(self):
        return math.sin(self.theta)

    @property
    def length(self):
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)


@dataclass(frozen=True)
class LineSupportRegion:
    """A validated region; ``pixels`` holds ``(col, row)`` gradient-grid indices."""

    pixels: np.ndarray
    mean_angle: float
    rect: Rect
    nfa_log10: float

    @property
    def rectangle(self):
        r = self.rect
        return (0.5 * (r.x1 + r.x2), 0.5 * (r.y1 + r.y2), r.theta, r.length, r.width)


@dataclass(frozen=True)
class EdgeChain:
    points: np.ndarray
    anchors: np.ndarray
    source_region: tuple
    # mean level-line angle of the supporting region(s)
    angle: float

    @property
    def side(self) -> int:
        """+1 or -1 depending on the edge polarity; diagnostics only."""
        return 1 if math.sin(self.angle) >= 0 else -1

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------
# LSD core
# ---------------------------------------------------------------------
def _angle_diff(a, b):
    d = a - b
    while d <= -math.pi:
        d += 2 * math.pi
    while d > math.pi:
        d -= 2 * math.pi
    return d


class _LSD:
    def __init__(self, field: GradientField, tau: float, quant: float):
        self.h, self.w = field.shape
        self.tau = tau
        self.p = tau / math.pi
        rho = quant / math.sin(tau)
        mag = field.magnitude
        self.mag = mag
        self.valid = mag > rho
        self.angle = field.angle
        self.ang = field.angle.ravel().tolist()
        self.cos = np.cos(field.angle).ravel().tolist()
        self.sin = np.sin(field.angle).ravel().tolist()
        self.defined = self.valid.ravel().tolist()
        self.used = bytearray(self.h * self.w)
        self.log_nt = 2.5 * (math.log10(self.w) + math.log10(self.h)) + math.log10(N_PRECISIONS)
        self.min_reg_size = int(-self.log_nt / math.log10(self.p))

    # -- region growing -------------------------------------------------
    def grow(self, seed: int, prec: float) -> tuple[list, float]:
        w, h = self.w, self.h
        ang, cos, sin, defined, used = self.ang, self.cos, self.sin, self.defined, self.used
        reg = [seed]
        used[seed] = 1
        sx, sy = cos[seed], sin[seed]
        reg_angle = ang[seed]
        two_pi = 2 * math.pi
        i = 0
        while i < len(reg):
            idx = reg[i]
            y0, x0 = divmod(idx, w)
            for ddx, ddy in _NEIGHBORS:
                x, y = x0 + ddx, y0 + ddy
                if x < 0 or y < 0 or x >= w or y >= h:
                    continue
                j = y * w + x
                if used[j] or not defined[j]:
                    continue
                t = abs(reg_angle - ang[j])
                if t > 1.5 * math.pi:
                    t = abs(t - two_pi)
                if t <= prec:
                    used[j] = 1
                    reg.append(j)
                    sx += cos[j]
                    sy += sin[j]
                    reg_angle = math.atan2(sy, sx)
            i += 1
        return reg, reg_angle

    def release(self, idx):
        for j in idx:
            self.used[j] = 0

    # -- rectangle approximation ----------------------------------------
    def region2rect(self, reg, reg_angle, prec, p) -> Rect:
        idx = np.asarray(reg)
        py, px = np.divmod(idx, self.w)
        wts = self.mag.ravel()[idx]
        sw = wts.sum()
        cx = float(np.dot(wts, px) / sw)
        cy = float(np.dot(wts, py) / sw)
        ddx = px - cx
        ddy = py - cy
        ixx = float(np.dot(wts, ddy * ddy))
        iyy = float(np.dot(wts, ddx * ddx))
        ixy = -float(np.dot(wts, ddx * ddy))
        lam = 0.5 * (ixx + iyy - math.sqrt((ixx - iyy) ** 2 + 4.0 * ixy * ixy))
        if abs(ixx) > abs(iyy):
            theta = math.atan2(lam - ixx, ixy)
        else:
            theta = math.atan2(ixy, lam - iyy)
        if abs(_angle_diff(theta, reg_angle)) > prec:
            theta += math.pi
        dx, dy = math.cos(theta), math.sin(theta)
        lcoord = ddx * dx + ddy * dy
        wcoord = -ddx * dy + ddy * dx
        l_min, l_max = float(lcoord.min()), float(lcoord.max())
        w_min, w_max = float(wcoord.min()), float(wcoord.max())
        width = max(w_max - w_min, 1.0)
        return Rect(x1=cx + l_min * dx, y1=cy + l_min * dy, x2=cx + l_max * dx, y2=cy + l_max * dy,
                    width=width, cx=cx, cy=cy, theta=theta, prec=prec, p=p)

    # -- validation -------------------------------------------------------
    def rect_counts(self, r: Rect) -> tuple[int, int]:
        dx, dy = r.dx, r.dy
        hw = 0.5 * r.width
        xs = [r.x1 - dy * hw, r.x1 + dy * hw, r.x2 - dy * hw, r.x2 + dy * hw]
        ys = [r.y1 + dx * hw, r.y1 - dx * hw, r.y2 + dx * hw, r.y2 - dx * hw]
        x0 = max(int(math.floor(min(xs))), 0)
        x1 = min(int(math.ceil(max(xs))), self.w - 1)
        y0 = max(int(math.floor(min(ys))), 0)
        y1 = min(int(math.ceil(max(ys))), self.h - 1)
        if x1 < x0 or y1 < y0:
            return 0, 0
        gy, gx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        rx = gx - r.x1
        ry = gy - r.y1
        lc = rx * dx + ry * dy
        wc = -rx * dy + ry * dx
        eps = 1e-9
        inside = (lc >= -eps) & (lc <= r.length + eps) & (np.abs(wc) <= hw + eps)
        n = int(inside.sum())
        if n == 0:
            return 0, 0
        ang = self.angle[gy[inside], gx[inside]]
        ok = self.valid[gy[inside], gx[inside]]
        # rect.theta may exceed pi after the flip in region2rect
        t = np.mod(r.theta - ang + math.pi, 2 * math.pi) - math.pi
        k = int(np.count_nonzero(ok & (np.abs(t) <= r.prec)))
        return n, k

    def score(self, r: Rect) -> float:
        """-log10(NFA) of ``r``; larger is more meaningful."""
        n, k = self.rect_counts(r)
        return -nfa_log10(n, k, r.p, self.log_nt)

    def improve(self, r: Rect) -> tuple[Rect, float]:
        best = self.score(r)
        if best > LOG_EPS:
            return r, best
        cand = r
        for _ in range(5):
            cand = replace(cand, p=cand.p / 2, prec=cand.p / 2 * math.pi)
            s = self.score(cand)
            if s > best:
                best, r = s, cand
        if best > LOG_EPS:
            return r, best
        cand = r
        for _ in range(5):
            if cand.width - 0.5 < 0.5:
                break
            cand = replace(cand, width=cand.width - 0.5)
            s = self.score(cand)
            if s > best:
                best, r = s, cand
        if best > LOG_EPS:
            return r, best
        for sign in (1.0, -1.0):
            cand = r
            for _ in range(5):
                if cand.width - 0.5 < 0.5:
                    break
                shift = sign * 0.25
                cand = replace(cand, x1=cand.x1 - cand.dy * shift, y1=cand.y1 + cand.dx * shift,
                               x2=cand.x2 - cand.dy * shift, y2=cand.y2 + cand.dx * shift,
                               width=cand.width - 0.5)
                s = self.score(cand)
                if s > best:
                    best, r = s, cand
            if best > LOG_EPS:
                return r, best
        cand = r
        for _ in range(5):
            cand = replace(cand, p=cand.p / 2, prec=cand.p / 2 * math.pi)
            s = self.score(cand)
            if s > best:
                best, r = s, cand
        return r, best

    # -- refinement -------------------------------------------------------
    def density(self, reg, r: Rect) -> float:
        return len(reg) / (max(r.length, 1e-12) * r.width)

    def refine(self, reg, reg_angle, r: Rect):
        if self.density(reg, r) >= DENSITY_TH:
            return reg, reg_angle, r
        seed = reg[0]
        sy, sx = divmod(seed, self.w)
        ang_c = self.ang[seed]
        idx = np.asarray(reg)
        py, px = np.divmod(idx, self.w)
        near = np.hypot(px - sx, py - sy) < r.width
        diffs = np.array([_angle_diff(a, ang_c) for a in np.asarray(self.ang)[idx[near]]])
        mean = diffs.mean()
        tau = 2.0 * math.sqrt(max(np.mean(diffs * diffs) - mean * mean, 0.0))
        self.release(reg)
        reg, reg_angle = self.grow(seed, tau)
        if len(reg) < 2:
            return None
        r = self.region2rect(reg, reg_angle, r.prec, r.p)
        if self.density(reg, r) >= DENSITY_TH:
            return reg, reg_angle, r
        return self.reduce_radius(reg, reg_angle, r)

    def reduce_radius(self, reg, reg_angle, r: Rect):
        seed = reg[0]
        sy, sx = divmod(seed, self.w)
        rad = max(math.hypot(sx - r.x1, sy - r.y1), math.hypot(sx - r.x2, sy - r.y2))
        while self.density(reg, r) < DENSITY_TH:
            rad *= 0.75
            idx = np.asarray(reg)
            py, px = np.divmod(idx, self.w)
            keep = np.hypot(px - sx, py - sy) <= rad
            self.release(idx[~keep].tolist())
            reg = idx[keep].tolist()
            if len(reg) < 2:
                return None
            r = self.region2rect(reg, reg_angle, r.prec, r.p)
        return reg, reg_angle, r

    # -- driver -----------------------------------------------------------
    def run(self) -> list[LineSupportRegion]:
        mag = self.mag.ravel()
        cand = np.flatnonzero(self.valid.ravel())
        order = cand[np.argsort(-mag[cand], kind="stable")].tolist()
        out = []
        for seed in order:
            if self.used[seed]:
                continue
            reg, reg_angle = self.grow(seed, self.tau)
            if len(reg) < self.min_reg_size:
                continue
            r = self.region2rect(reg, reg_angle, self.tau, self.p)
            refined = self.refine(reg, reg_angle, r)
            if refined is None:
                continue
            reg, reg_angle, r = refined
            r, s = self.improve(r)
            if s <= LOG_EPS:
                continue
            idx = np.asarray(reg)
            py, px = np.divmod(idx, self.w)
            out.append(LineSupportRegion(pixels=np.column_stack([px, py]).astype(np.int64),
                                         mean_angle=float(reg_angle), rect=r, nfa_log10=-s))
        return out


def nfa_log10(n: int, k: int, p: float, log_nt: float) -> float:
    """log10 of ``NT * P[Binomial(n, p) >= k]``."""
    if n == 0 or k == 0:
        return log_nt
    tail = binom.logsf(k - 1, n, p) / math.log(10.0)
    return log_nt + float(tail)


def detect_line_segments(field: GradientField, tau: float = TAU,
                         quant: float = QUANT) -> list[LineSupportRegion]:
    """Validated line support regions of ``field`` (NFA <= 1)."""
    return _LSD(field, tau, quant).run()


# ---------------------------------------------------------------------
# grouping edge points
# ---------------------------------------------------------------------
def label_map(shape, regions) -> np.ndarray:
    """Region index per gradient-grid pixel, -1 for none, dilated by one pixel.

    Pixels reached only through dilation take the largest neighboring label.
    """
    labels = np.full(shape, -1, dtype=np.int64)
    for i, reg in enumerate(regions):
        labels[reg.pixels[:, 1], reg.pixels[:, 0]] = i
    grown = ndimage.grey_dilation(labels, size=(3, 3), mode="constant", cval=-1)
    return np.where(labels >= 0, labels, grown)


def assign_edges_to_regions(points: EdgePoints, regions, shape=None,
                            tau: float = TAU) -> list[EdgeChain]:
    """Group edge points by the region containing their anchor pixel.

    ``shape`` is the gradient-grid shape; it defaults to the bounding box
    of anchors and region pixels. A point also needs a level-line angle
    within ``tau`` of its region's mean angle, which keeps the two
    opposite-polarity edges of a string apart. Points of each region are
    ordered along the region axis; chains with fewer than 2 points are
    dropped.
    """
    if len(points) == 0 or not regions:
        return []
    if shape is None:
        allpix = np.vstack([points.anchor] + [r.pixels for r in regions])
        shape = (int(allpix[:, 1].max()) + 2, int(allpix[:, 0].max()) + 2)
    labels = label_map(shape, regions)
    ax, ay = points.anchor[:, 0], points.anchor[:, 1]
    inb = (ax >= 0) & (ay >= 0) & (ax < shape[1]) & (ay < shape[0])
    lab = np.full(len(points), -1, dtype=np.int64)
    lab[inb] = labels[ay[inb], ax[inb]]
    chains = []
    for i, reg in enumerate(regions):
        sel = np.flatnonzero(lab == i)
        if sel.size:
            d = np.mod(points.angle[sel] - reg.mean_angle + math.pi, 2 * math.pi) - math.pi
            sel = sel[np.abs(d) <= tau]
        if sel.size < 2:
            continue
        xy = points.xy[sel]
        proj = xy[:, 0] * reg.rect.dx + xy[:, 1] * reg.rect.dy
        order = np.argsort(proj, kind="stable")
        chains.append(EdgeChain(points=xy[order], anchors=points.anchor[sel][order],
                                source_region=(i,), angle=reg.mean_angle))
    return chains


def _chain_axis(chain: EdgeChain):
    line, _ = fit_regression_line(chain.points)
    u = line.direction
    # orient the axis along the level-line direction so polarity is kept
    if u[0] * math.cos(chain.angle) + u[1] * math.sin(chain.angle) < 0:
        u = -u
    return line, u


def _mergeable(a, b, angle_tol, gap_tol, offset_tol) -> bool:
    ca, la, ua = a
    cb, lb, ub = b
    if float(np.dot(ua, ub)) < math.cos(angle_tol):
        return False
    u = ua + ub
    u /= np.linalg.norm(u)
    n = np.array([-u[1], u[0]])
    pa = ca.points @ u
    pb = cb.points @ u
    if pa.mean() > pb.mean():
        ca, cb, pa, pb = cb, ca, pb, pa
    gap = pb.min() - pa.max()
    if gap > gap_tol:
        return False
    end_a = ca.points[int(np.argmax(pa))]
    start_b = cb.points[int(np.argmin(pb))]
    return abs(float(np.dot(start_b - end_a, n))) <= offset_tol


def merge_chains(chains, angle_tol: float = DEFAULT_MERGE_ANGLE,
                 gap_tol: float = DEFAULT_MERGE_GAP,
                 offset_tol: float = DEFAULT_MERGE_OFFSET) -> list[EdgeChain]:
    """Concatenate chains that continue one another.

    Two chains merge when their regression directions (same polarity)
    differ by at most ``angle_tol``, the gap between facing ends along the
    common axis is at most ``gap_tol`` and the facing ends are within
    ``offset_tol`` of each other across it. Merging is transitive and is
    repeated until nothing changes, so the result is a fixed point.
    """
    chains = list(chains)
    while True:
        info = [(c, *_chain_axis(c)) for c in chains]
        parent = list(range(len(chains)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        merged_any = False
        for i in range(len(chains)):
            for j in range(i + 1, len(chains)):
                if find(i) == find(j):
                    continue
                if _mergeable(info[i], info[j], angle_tol, gap_tol, offset_tol):
                    parent[find(j)] = find(i)
                    merged_any = True
        if not merged_any:
            return chains
        groups = {}
        for i in range(len(chains)):
            groups.setdefault(find(i), []).append(i)
        out = []
        for root in sorted(groups):
            members = groups[root]
            if len(members) == 1:
                out.append(chains[members[0]])
                continue
            pts = np.vstack([chains[m].points for m in members])
            anc = np.vstack([chains[m].anchors for m in members])
            src = tuple(sorted(s for m in members for s in chains[m].source_region))
            sw = sum(len(chains[m]) for m in members)
            sx = sum(len(chains[m]) * math.cos(chains[m].angle) for m in members) / sw
            sy = sum(len(chains[m]) * math.sin(chains[m].angle) for m in members) / sw
            angle = math.atan2(sy, sx)
            tmp = EdgeChain(pts, anc, src, angle)
            _, u = _chain_axis(tmp)
            order = np.argsort(pts @ u, kind="stable")
            out.append(EdgeChain(pts[order], anc[order], src, angle))
        chains = out
