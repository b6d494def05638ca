"""Image to smoothed edge chains: the extraction pipeline shared by the CLI."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .edges import (DEFAULT_EDGE_SIGMA, DEFAULT_EDGE_THRESHOLD, compute_gradient, detect_edges,
                    smooth_image)
from .line_support import (DEFAULT_MERGE_ANGLE, DEFAULT_MERGE_GAP, DEFAULT_MERGE_OFFSET,
                           assign_edges_to_regions, detect_line_segments, merge_chains)
from .raster import GrayImage
from .resample import DEFAULT_T, resample_chain, smooth_subsample

log = logging.getLogger(__name__)

DEFAULT_MIN_POINTS = 50
DEFAULT_FRAME_MARGIN = 8.0
FRAME_ANGLE_TOL = math.radians(10.0)


@dataclass(frozen=True)
class ExtractConfig:
    t: int = DEFAULT_T
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD
    edge_sigma: float = DEFAULT_EDGE_SIGMA
    merge_angle: float = DEFAULT_MERGE_ANGLE
    merge_gap: float = DEFAULT_MERGE_GAP
    merge_offset: float = DEFAULT_MERGE_OFFSET
    min_points: int = DEFAULT_MIN_POINTS
    frame_margin: float = DEFAULT_FRAME_MARGIN


def hugs_frame(points: np.ndarray, width: int, height: int, margin: float) -> bool:
    """True when a chain runs along a frame side within ``margin`` px.

    Such chains are the boundary of the undefined area left by image
    correction, not strings.
    """
    if margin <= 0 or len(points) < 2:
        return False
    d = points[-1] - points[0]
    ang = math.atan2(abs(d[1]), abs(d[0]))
    x, y = points[:, 0], points[:, 1]
    if ang <= FRAME_ANGLE_TOL:
        return bool(np.all(y <= margin) or np.all(y >= height - 1 - margin))
    if ang >= 0.5 * math.pi - FRAME_ANGLE_TOL:
        return bool(np.all(x <= margin) or np.all(x >= width - 1 - margin))
    return False


def raw_chains(img: GrayImage, cfg: ExtractConfig = ExtractConfig()):
    """Merged sub-pixel edge chains, before resampling."""
    raw_field = compute_gradient(img)
    regions = detect_line_segments(raw_field)
    edge_field = compute_gradient(smooth_image(img, cfg.edge_sigma))
    points = detect_edges(edge_field, cfg.edge_threshold)
    chains = assign_edges_to_regions(points, regions, raw_field.shape)
    chains = merge_chains(chains, cfg.merge_angle, cfg.merge_gap, cfg.merge_offset)
    log.debug("%d regions, %d edge points, %d chains", len(regions), len(points), len(chains))
    return [c for c in chains if len(c) >= cfg.min_points
            and not hugs_frame(c.points, img.width, img.height, cfg.frame_margin)]


def extract_chains(img: GrayImage, cfg: ExtractConfig = ExtractConfig()):
    """Run the full extraction and return ``(id, points)`` pairs.

    Chains are ordered by the position of their centroid (row-major) so the
    ids are stable for a given image.
    """
    chains = raw_chains(img, cfg)
    chains.sort(key=lambda c: (round(float(np.mean(c.points[:, 1])), 6),
                               round(float(np.mean(c.points[:, 0])), 6)))
    out = []
    for i, c in enumerate(chains):
        rc = smooth_subsample(resample_chain(c, str(i)), cfg.t)
        if len(rc) >= 2:
            out.append((str(i), rc.points))
    return out
