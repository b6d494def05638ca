"""Arc-length resampling, anti-alias smoothing and the chain text format."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DegenerateError, FormatError
from .metrics import fit_regression_line, signed_distances

PathLike = Union[str, os.PathLike]

DEFAULT_T = 30
HIGH_FREQ_SIGMA = 40.0


@dataclass(frozen=True)
class ResampledChain:
    points: np.ndarray
    step: float
    subsample_factor: int = 1
    origin_chain: str = ""

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class IntrinsicSignal:
    """Chain in its regression-line frame.

    ``s`` is the position along the line measured from the reference
    endpoint, ``v`` the signed distance to the line; ``low`` and ``high``
    split ``v`` into its smoothed part and the remainder.
    """

    s: np.ndarray
    v: np.ndarray
    low: np.ndarray
    high: np.ndarray
    sigma_samples: float

    def interior(self, margin_sigmas: float = 3.0) -> np.ndarray:
        """Boolean mask excluding ``margin_sigmas`` sigma at each end."""
        n = len(self.s)
        m = int(math.ceil(margin_sigmas * self.sigma_samples))
        mask = np.zeros(n, dtype=bool)
        mask[m:n - m] = True
        return mask


def _points_of(chain) -> np.ndarray:
    pts = getattr(chain, "points", chain)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def resample_chain(chain, origin: str = "") -> ResampledChain:
    """Uniform arc-length resampling with step ``L / N``.

    ``L`` is the polyline length and ``N`` the number of input points; the
    output holds ``N + 1`` samples at arc positions ``0, d, ..., L``, so both
    endpoints are kept.
    """
    pts = _points_of(chain)
    n = len(pts)
    if n < 2:
        raise DegenerateError(f"chain {origin}: resampling needs 2 points, got {n}")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    total = float(seg.sum())
    if not total > 0:
        raise DegenerateError(f"chain {origin}: zero length")
    step = total / n
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = step * np.arange(n + 1)
    targets[-1] = cum[-1]
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, n - 2)
    a = targets - cum[idx]
    b = cum[idx + 1] - targets
    ab = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        wa = np.where(ab > 0, b / ab, 1.0)
        wb = np.where(ab > 0, a / ab, 0.0)
    out = wa[:, None] * pts[idx] + wb[:, None] * pts[idx + 1]
    out[0] = pts[0]
    out[-1] = pts[-1]
    return ResampledChain(out, step, 1, origin)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at +-4 sigma, unit sum."""
    radius = max(int(math.ceil(4.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_smooth_1d(signal: np.ndarray, sigma: float) -> np.ndarray:
    """Convolve along axis 0 with mirror extension at both ends."""
    signal = np.asarray(signal, dtype=np.float64)
    if sigma <= 0 or len(signal) < 2:
        return signal.copy()
    ker = gaussian_kernel(sigma)
    r = len(ker) // 2
    pad = [(r, r)] + [(0, 0)] * (signal.ndim - 1)
    ext = np.pad(signal, pad, mode="reflect")
    if signal.ndim == 1:
        return np.convolve(ext, ker, mode="valid")
    return np.column_stack([np.convolve(ext[:, j], ker, mode="valid")
                            for j in range(signal.shape[1])])


def antialias_sigma(t: int) -> float:
    return 0.8 * math.sqrt(t * t - 1)


def smooth_subsample(chain: ResampledChain, t: int = DEFAULT_T) -> ResampledChain:
    """Gaussian blur of sigma ``0.8 sqrt(t^2 - 1)`` samples, then keep one point in ``t``."""
    if int(t) != t or t < 1:
        raise ValueError(f"subsample factor must be an integer >= 1, got {t}")
    t = int(t)
    if t == 1:
        return chain
    smoothed = gaussian_smooth_1d(chain.points, antialias_sigma(t))
    return ResampledChain(smoothed[::t], chain.step * t, chain.subsample_factor * t,
                          chain.origin_chain)


def high_frequency_component(chain, sigma: float = HIGH_FREQ_SIGMA) -> IntrinsicSignal:
    """Signed distance to the regression line minus its Gaussian-smoothed version.

    ``sigma`` is in pixels of arc length; it is converted to samples with the
    mean spacing along the line, which assumes near-uniform sampling (as
    produced by :func:`resample_chain`).
    """
    pts = _points_of(chain)
    try:
        line, st = fit_regression_line(pts)
    except DegenerateError as exc:
        raise DegenerateError(f"high-frequency diagnostic: {exc}") from None
    u = line.direction
    proj = (pts - [st.A_x, st.A_y]) @ u
    if proj[-1] < proj[0]:
        u, proj = -u, -proj
    v = signed_distances(line, pts)
    s = proj - proj[0]
    order = np.argsort(s, kind="stable")
    s, v = s[order], v[order]
    spacing = (s[-1] - s[0]) / max(len(s) - 1, 1)
    if not spacing > 0:
        raise DegenerateError("high-frequency diagnostic: chain has no extent")
    sig = sigma / spacing
    low = gaussian_smooth_1d(v, sig)
    return IntrinsicSignal(s=s, v=v, low=low, high=v - low, sigma_samples=sig)


# ---------------------------------------------------------------------
# chain text format
# ---------------------------------------------------------------------
def format_chains(chains) -> str:
    """Serialize ``chains`` (mapping or sequence of ``(id, points)``)."""
    items = chains.items() if isinstance(chains, dict) else chains
    blocks = []
    for cid, pts in items:
        cid = str(cid)
        if not cid or any(c.isspace() for c in cid):
            raise FormatError(f"chain id must be a non-empty token, got {cid!r}")
        pts = _points_of(pts)
        rows = [f"# chain {cid} {len(pts)}"]
        rows += [f"{x:.17g} {y:.17g}" for x, y in pts]
        blocks.append("\n".join(rows) + "\n")
    return "\n".join(blocks)


def parse_chains(text: str) -> list[tuple[str, np.ndarray]]:
    out = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] != "#" or parts[1] != "chain":
            raise FormatError(f"chain file line {i}: expected '# chain <id> <n>' header")
        cid = parts[2]
        try:
            n = int(parts[3])
        except ValueError:
            raise FormatError(f"chain file line {i}: bad point count") from None
        if i + n > len(lines):
            raise FormatError(f"chain {cid}: truncated, expected {n} points")
        try:
            pts = np.array([[float(v) for v in lines[i + j].split()] for j in range(n)],
                           dtype=np.float64).reshape(n, 2)
        except ValueError:
            raise FormatError(f"chain {cid}: malformed point line") from None
        out.append((cid, pts))
        i += n
    return out


def write_chains(chains, path: PathLike) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_chains(chains))


def read_chains(path: PathLike) -> list[tuple[str, np.ndarray]]:
    with open(path, "r", encoding="ascii") as fh:
        return parse_chains(fh.read())
