import math

import numpy as np
import pytest

from conftest import model_k4
from harpcal.edges import EdgePoints, compute_gradient, detect_edges, smooth_image
from harpcal.line_support import (DEFAULT_MERGE_ANGLE, DEFAULT_MERGE_GAP, DEFAULT_MERGE_OFFSET, TAU, EdgeChain,
                                  assign_edges_to_regions, detect_line_segments, merge_chains, nfa_log10)
from harpcal.pipeline import raw_chains
from harpcal.synth import HarpScene, HarpString, harp_scene, render


def string_image(angle_deg=80.0, size=(300, 200), distortion=None, x=150.0):
    a = math.radians(angle_deg)
    s = HarpString((x, size[1] / 2 - 0.5), (math.cos(a), math.sin(a)), 4.0, -0.6)
    return render(HarpScene(size[0], size[1], (s,), 0.85, distortion))


def chains_of(img, sigma=1.2):
    f = compute_gradient(img)
    regions = detect_line_segments(f)
    pts = detect_edges(compute_gradient(smooth_image(img, sigma)))
    return f, regions, pts, assign_edges_to_regions(pts, regions, f.shape)


def make_chain(points, angle=0.0, src=(0,)):
    pts = np.asarray(points, dtype=float)
    return EdgeChain(pts, np.floor(pts).astype(np.int64), src, angle)


# -- detection ---------------------------------------------------------
def test_one_string_two_regions():
    f, regions, _, _ = chains_of(string_image(80.0))
    assert len(regions) == 2
    for r in regions:
        axis = math.degrees(r.rect.theta) % 180.0
        assert abs(axis - 80.0) <= 0.5
        assert r.nfa_log10 <= 0


def test_region_angles_within_tolerance():
    f, regions, _, _ = chains_of(string_image(33.0))
    for r in regions:
        ang = f.angle[r.pixels[:, 1], r.pixels[:, 0]]
        d = np.mod(ang - r.mean_angle + np.pi, 2 * np.pi) - np.pi
        assert np.all(np.abs(d) <= TAU + 1e-12)


def test_rectangle_encloses_region():
    _, regions, _, _ = chains_of(string_image(20.0))
    for r in regions:
        rc = r.rect
        c = r.pixels + 0.5
        u = np.array([rc.dx, rc.dy])
        n = np.array([-rc.dy, rc.dx])
        along = (c - [rc.x1, rc.y1]) @ u
        across = (c - [rc.cx, rc.cy]) @ n
        inside = (along >= -1) & (along <= rc.length + 1) & (np.abs(across) <= rc.width / 2 + 1)
        assert inside.mean() >= 0.5


def test_constant_image_no_regions():
    assert detect_line_segments(compute_gradient(np.full((50, 60), 0.5))) == []


def test_nfa_monotone_in_aligned_count():
    vals = [nfa_log10(100, k, 0.125, 5.0) for k in range(0, 101, 10)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert nfa_log10(100, 0, 0.125, 5.0) == 5.0


@pytest.mark.slow
def test_noise_images_rarely_validated():
    rng = np.random.default_rng(2024)
    counts = [len(detect_line_segments(compute_gradient(rng.random((128, 128))))) for _ in range(100)]
    assert np.mean(counts) <= 1.0


# -- assignment --------------------------------------------------------
def test_assignment_is_partition_and_ordered():
    f, regions, pts, chains = chains_of(string_image(60.0))
    assert len(chains) == 2
    seen = set()
    for c in chains:
        keys = {tuple(p) for p in c.points}
        assert not keys & seen
        seen |= keys
        reg = regions[c.source_region[0]]
        proj = c.points @ [reg.rect.dx, reg.rect.dy]
        assert np.all(np.diff(proj) >= 0)
        # anchors lie in the region dilated by one pixel
        pix = {tuple(p) for p in reg.pixels}
        for a in c.anchors:
            assert any((a[0] + dx, a[1] + dy) in pix for dx in (-1, 0, 1) for dy in (-1, 0, 1))
    assert {c.side for c in chains} == {-1, 1}


def test_points_outside_regions_dropped():
    f, regions, pts, _ = chains_of(string_image(60.0))
    far = EdgePoints(np.array([[5.2, 5.1], [6.3, 5.0]]), np.ones(2), np.array([[5, 5], [6, 5]]), np.zeros(2))
    assert assign_edges_to_regions(far, regions, f.shape) == []


def test_all_points_in_one_region():
    f, regions, pts, _ = chains_of(string_image(60.0))
    reg = regions[0]
    sel = np.isin(pts.anchor[:, 0] * 10000 + pts.anchor[:, 1], reg.pixels[:, 0] * 10000 + reg.pixels[:, 1])
    sub = pts.subset(np.flatnonzero(sel))
    sub = EdgePoints(sub.xy, sub.strength, sub.anchor, np.full(len(sub), reg.mean_angle))
    chains = assign_edges_to_regions(sub, [reg], f.shape)
    assert len(chains) == 1 and len(chains[0]) == len(sub)


def test_harp_gives_twenty_long_chains(straight_harp):
    chains = raw_chains(straight_harp)
    assert len(chains) == 20
    scene = harp_scene(1200, 800, angle_deg=75.0)
    for c in chains:
        # visible string length along the chain direction
        span = np.ptp(c.points @ np.array([math.cos(math.radians(75)), math.sin(math.radians(75))]))
        assert len(c) >= 0.9 * span
    assert len(scene.strings) == 10


# -- merging -----------------------------------------------------------
def test_collinear_gap_merged():
    a = make_chain([(x, 0.0) for x in range(0, 20)])
    b = make_chain([(x, 0.0) for x in range(25, 45)], src=(1,))
    out = merge_chains([a, b], math.radians(2), 50, 2)
    assert len(out) == 1 and len(out[0]) == 40
    assert np.all(np.diff(out[0].points[:, 0]) > 0)
    assert out[0].source_region == (0, 1)


def test_parallel_offset_not_merged():
    a = make_chain([(x, 0.0) for x in range(0, 20)])
    b = make_chain([(x, 10.0) for x in range(25, 45)], src=(1,))
    assert len(merge_chains([a, b], math.radians(2), 50, 2)) == 2


def test_opposite_polarity_not_merged():
    a = make_chain([(x, 0.0) for x in range(0, 20)], angle=0.0)
    b = make_chain([(x, 0.0) for x in range(25, 45)], angle=math.pi, src=(1,))
    assert len(merge_chains([a, b], math.radians(2), 50, 2)) == 2


def test_merge_is_transitive_and_idempotent():
    parts = [make_chain([(x, 0.01 * i) for x in range(30 * i, 30 * i + 25)], src=(i,)) for i in range(4)]
    out = merge_chains(parts[::-1])
    assert len(out) == 1
    again = merge_chains(out)
    assert len(again) == 1
    np.testing.assert_array_equal(again[0].points, out[0].points)


def test_merge_defaults():
    assert DEFAULT_MERGE_ANGLE == pytest.approx(math.radians(3))
    assert (DEFAULT_MERGE_GAP, DEFAULT_MERGE_OFFSET) == (100.0, 3.0)


def test_distortion_split_string_is_merged():
    img = string_image(90.0, size=(1200, 800), distortion=model_k4(k=(1.0, 0.0, 0.04)), x=200.0)
    f, regions, pts, chains = chains_of(img)
    assert len(regions) >= 6  # each edge cut into about three segments
    merged = merge_chains(chains)
    assert len(merged) == 2
    assert sorted({s for c in merged for s in c.source_region}) == list(range(len(regions)))
