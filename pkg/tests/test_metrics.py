import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from harpcal.errors import DegenerateError
from harpcal.metrics import (fit_regression_line, line_moments, max_error, parse_report, rms_distance,
                             signed_distances)

TRI = [(0, 0), (1, 1), (2, 0)]


def scan_min(points, step=1e-4):
    st_ = line_moments(points)
    th = np.arange(0, np.pi, step)
    s, c = np.sin(th), np.cos(th)
    return float(np.min(st_.n * (s * s * st_.V_xx + 2 * s * c * st_.V_xy + c * c * st_.V_yy)))


def test_collinear_fit():
    line, _ = fit_regression_line([(0, 0), (1, 1), (2, 2)])
    np.testing.assert_allclose(signed_distances(line, [(0, 0), (1, 1), (2, 2)]), 0, atol=1e-12)
    assert line.alpha ** 2 + line.beta ** 2 == pytest.approx(1, abs=1e-12)


def test_worked_example():
    line, st_ = fit_regression_line(TRI)
    assert st_.V_xy == pytest.approx(0, abs=1e-15)
    assert st_.V_xx == pytest.approx(2 / 3) and st_.V_yy == pytest.approx(2 / 9)
    assert abs(line.alpha) == pytest.approx(0, abs=1e-15) and line.beta == pytest.approx(1)
    assert line.gamma == pytest.approx(1 / 3)
    np.testing.assert_allclose(signed_distances(line, TRI), [-1 / 3, 2 / 3, -1 / 3], atol=1e-15)
    assert scan_min(TRI) == pytest.approx(2 / 3, abs=1e-8)


def test_signed_distance_examples():
    line, _ = fit_regression_line(TRI)
    assert signed_distances(line, [(2, 0)])[0] == pytest.approx(-1 / 3)
    assert signed_distances(line, [(5, 1 / 3)])[0] == pytest.approx(0, abs=1e-15)
    n = line.normal
    p = np.array([0.0, 1 / 3])
    assert signed_distances(line, [p + n])[0] == pytest.approx(1)
    assert signed_distances(line, [p - n])[0] == pytest.approx(-1)


def test_isotropic_cloud():
    sq = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    line, st_ = fit_regression_line(sq)
    assert st_.isotropic and line.theta == 0.0
    s1 = np.sum(signed_distances(line, sq) ** 2)
    rot = fit_regression_line([(1, 0), (0, 1.0 + 1e-3), (-1, 0), (0, -1.0 - 1e-3)])[0]
    assert s1 == pytest.approx(np.sum(signed_distances(rot, sq) ** 2), rel=1e-2)
    rep = rms_distance([sq])
    assert rep.warnings and "isotropic" in rep.warnings[0]
    assert "# warning:" in rep.to_text()


def test_degenerate_fit():
    with pytest.raises(DegenerateError):
        fit_regression_line([(1, 2), (1, 2)])
    with pytest.raises(DegenerateError):
        fit_regression_line([(1, 2)])
    with pytest.raises(DegenerateError, match="chain bad"):
        rms_distance({"ok": TRI, "bad": [(0, 0), (0, 0)]})


def test_report_examples():
    rep = rms_distance([TRI])
    assert rep.d == pytest.approx(math.sqrt(2 / 9), abs=1e-12)
    assert rep.d_max == pytest.approx(1.0, abs=1e-12)
    assert max_error([TRI]) == pytest.approx(1.0)
    flat = [(0, 5), (1, 5), (3, 5)]
    assert max_error([TRI, flat]) == pytest.approx(math.sqrt(0.5))
    z = rms_distance([[(0, 0), (1, 1), (2, 2)], flat])
    assert z.d <= 1e-12 and z.d_max <= 1e-12


def test_report_format_round_trip():
    rep = rms_distance({"a": TRI, "b": [(0, 0), (1, 0.1), (2, 0), (3, 0.2)]})
    text = rep.to_text()
    head = text.splitlines()[:4]
    assert head[0] == f"d_rms = {rep.d:.6g}" and head[1] == f"d_max = {rep.d_max:.6g}"
    assert head[2:] == ["lines = 2", "points = 7"]
    assert text.splitlines()[4].startswith("line a n=3 rms=0.471405 range=1")
    back = parse_report(text)
    assert back.L == 2 and back.N_T == 7
    assert back.d == pytest.approx(rep.d, rel=1e-5)
    assert [r.id for r in back.per_line] == ["a", "b"]


point_sets = arrays(np.float64, st.tuples(st.integers(3, 30), st.just(2)),
                    elements=st.floats(-100, 100, allow_nan=False))


def _nondegenerate(pts):
    st_ = line_moments(pts)
    return st_.V_xx + st_.V_yy > 1e-6


@settings(max_examples=200, deadline=None)
@given(point_sets)
def test_fit_matches_scan(pts):
    if not _nondegenerate(pts):
        return
    line, st_ = fit_regression_line(pts)
    S = float(np.sum(signed_distances(line, pts) ** 2))
    assert S <= scan_min(pts) + 1e-8 * max(1.0, st_.n * (st_.V_xx + st_.V_yy))
    assert abs(np.sum(signed_distances(line, pts))) <= 1e-9 * max(1.0, np.abs(pts).max() * len(pts))
    assert st_.V_xy ** 2 <= st_.V_xx * st_.V_yy * (1 + 1e-12) + 1e-300


@settings(max_examples=100, deadline=None)
@given(st.lists(point_sets, min_size=1, max_size=4), st.floats(0, 2 * math.pi),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.01, 100))
def test_invariances(sets, angle, tx, ty, lam):
    if not all(_nondegenerate(p) for p in sets):
        return
    rep = rms_distance(sets)
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    moved = rms_distance([p @ R.T + (tx, ty) for p in sets])
    scale = max(1.0, max(np.abs(p).max() for p in sets))
    assert moved.d == pytest.approx(rep.d, abs=1e-9 * scale)
    assert moved.d_max == pytest.approx(rep.d_max, abs=1e-9 * scale)
    scaled = rms_distance([p * lam for p in sets])
    assert scaled.d == pytest.approx(lam * rep.d, rel=1e-9, abs=1e-12 * scale * lam)
    assert scaled.d_max == pytest.approx(lam * rep.d_max, rel=1e-9, abs=1e-12 * scale * lam)
    for row in rep.per_line:
        assert row.range >= row.rms - 1e-12
    total = sum(r.n * r.rms ** 2 for r in rep.per_line)
    assert rep.d ** 2 * rep.N_T == pytest.approx(total, rel=1e-9, abs=1e-18)


def test_dmax_above_d_for_equal_lengths(rng):
    sets = [rng.normal(0, 1, (25, 2)) * (10, 0.3) for _ in range(6)]
    rep = rms_distance(sets)
    assert rep.d_max >= rep.d
