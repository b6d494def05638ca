import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harpcal.calib import (CalibrationProblem, build_ABC, energy_D, energy_E, energy_E_matrix,
                           minimize_D, minimize_E_alternating)
from harpcal.errors import DegenerateError
from harpcal.metrics import line_moments, rms_distance
from harpcal.model import DistortionModel, correct_points, image_center

from conftest import H, K2, K4, W, model_k4, oracle_chains


def corrected_rms(model, chains):
    return rms_distance([(cid, correct_points(model, p)) for cid, p in chains]).d


def problem(chains, order, center_mode="fixed", **kw):
    return CalibrationProblem(chains, order, center_mode, (W, H), **kw)


@pytest.fixture(scope="module")
def chains2():
    return oracle_chains(model_k4(k=K2))


@pytest.fixture(scope="module")
def chains4():
    return oracle_chains(model_k4(k=K4))


@pytest.fixture(scope="module")
def straight():
    return oracle_chains(None)


# ---------------------------------------------------------------------
# problem validation
# ---------------------------------------------------------------------
def test_short_chain_rejected(straight):
    chains = straight[:3] + [("short", straight[3][1][:9])]
    with pytest.raises(DegenerateError, match="short"):
        problem(chains, 4)


def test_orientation_warning():
    t = np.linspace(0, 1, 50)[:, None]
    par = [(str(i), np.array([100.0, 100.0 + 50 * i]) + t * [800.0, 1.0]) for i in range(4)]
    with pytest.warns(UserWarning):
        p = problem(par, 2)
    assert p.orientation_warning
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        problem(oracle_chains(None, n_strings=6, points=50), 2)


def test_bad_center_mode(straight):
    with pytest.raises(ValueError):
        problem(straight, 2, "moving")


# ---------------------------------------------------------------------
# energy D
# ---------------------------------------------------------------------
def test_energy_D_worked_example():
    m = DistortionModel((0.0, 0.0), (1.0,), 10.0)
    assert energy_D(m, [np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])]) == pytest.approx(2 / 9, abs=1e-15)


def test_energy_D_zero_cases(straight, chains4):
    assert energy_D(DistortionModel.identity(W, H, 2), straight) <= 1e-20
    assert energy_D(model_k4(k=K4), chains4) <= 1e-12


def test_energy_D_equals_mean_line_ms(chains4, rng):
    m = DistortionModel(image_center(W, H), (1.0, 0.01, -0.02), 720.0, max_radius=800.0)
    rep = rms_distance([(c, correct_points(m, p)) for c, p in chains4])
    expect = np.mean([r.rms ** 2 for r in rep.per_line])
    assert abs(energy_D(m, chains4) - expect) <= 1e-12 * max(expect, 1.0)


def test_degenerate_corrected_chain():
    m = DistortionModel((0.0, 0.0), (1.0,), 10.0)
    with pytest.raises(DegenerateError):
        energy_D(m, [np.array([[1.0, 1.0], [1.0, 1.0]])])


# ---------------------------------------------------------------------
# minimize_D
# ---------------------------------------------------------------------
def test_minimize_D_order2(chains2):
    res = minimize_D(problem(chains2, 2))
    assert res.energy_final <= 1e-8
    assert corrected_rms(res.model, chains2) <= 1e-4
    assert res.energy_final <= res.energy_initial
    assert np.allclose(res.model.k, K2, atol=1e-5)


def test_minimize_D_straight_stays_identity(straight):
    res = minimize_D(problem(straight, 4))
    assert res.model.k[0] == 1.0
    assert max(abs(v) for v in res.model.k[1:]) <= 1e-6


def test_minimize_D_order4_free_center(chains4):
    true_c = image_center(W, H)
    p = problem(chains4, 4, "free")
    init = DistortionModel((true_c[0] + 20.0, true_c[1]), (1.0, 0, 0, 0, 0), p.radius_scale,
                           max_radius=1000.0)
    res = minimize_D(p, init)
    assert math.dist(res.model.center, true_c) <= 0.5
    assert corrected_rms(res.model, chains4) <= 1e-3


def test_minimize_D_history_monotone(chains4):
    res = minimize_D(problem(chains4, 4))
    h = np.asarray(res.history)
    assert np.all(np.diff(h) <= 0)
    assert h[0] == res.energy_initial and h[-1] == res.energy_final


def test_minimize_D_deterministic(chains2):
    a = minimize_D(problem(chains2, 2))
    b = minimize_D(problem(chains2, 2))
    assert a.model.k == b.model.k and a.history == b.history


def test_calibration_log(chains2):
    text = minimize_D(problem(chains2, 2)).log_text()
    lines = text.splitlines()
    assert lines[0] == "# method D"
    assert lines[-1].startswith("iter ")


# ---------------------------------------------------------------------
# energy E and its matrix form
# ---------------------------------------------------------------------
def test_energy_E_collinear_zero(straight):
    assert energy_E((1.0, 0.0, 0.0), straight, image_center(W, H), 720.0) <= 1e-12


def test_energy_E_isotropic_cloud(rng):
    pts = rng.normal(0.0, 1.0, (400, 2)) + [300.0, 200.0]
    st_ = line_moments(pts)
    direct = st_.V_xx * st_.V_yy - st_.V_xy ** 2
    e = energy_E((1.0,), [pts], (0.0, 0.0), 100.0)
    abc = build_ABC([pts], (0.0, 0.0), 2, 100.0)
    e_mat = energy_E_matrix((1.0, 0.0, 0.0), abc)
    assert abs(e - direct) <= 1e-9 * direct
    assert abs(e_mat - direct) <= 1e-9 * direct


def test_build_ABC_order0_moment(rng):
    pts = rng.uniform(0, 500, (50, 2))
    (A, B, C), = build_ABC([pts], (250.0, 250.0), 3, 360.0)
    st_ = line_moments(pts)
    assert abs(A[0, 0] - st_.V_xx) <= 1e-12 * st_.V_xx
    assert abs(B[0, 0] - st_.V_yy) <= 1e-12 * st_.V_yy
    assert abs(C[0, 0] - st_.V_xy) <= 1e-12 * max(abs(st_.V_xx), 1.0)


def test_build_ABC_single_point():
    (A, B, C), = build_ABC([np.array([[3.0, 4.0]])], (0.0, 0.0), 3, 10.0)
    assert not A.any() and not B.any() and not C.any()


@pytest.mark.parametrize("align", [False, True])
def test_dual_path_random_draws(align):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        order = int(rng.integers(1, 6))
        k = np.concatenate([[1.0], rng.uniform(-0.05, 0.05, order)])
        center = (rng.uniform(500, 700), rng.uniform(300, 500))
        chains = [rng.uniform(0, 1200, (int(rng.integers(3, 40)), 2)) for _ in range(int(rng.integers(1, 6)))]
        direct = energy_E(k, chains, center, 720.0)
        expanded = energy_E_matrix(k, build_ABC(chains, center, order, 720.0, align=align))
        worst = max(worst, abs(direct - expanded) / abs(direct))
    assert worst <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_E_nonnegative(seed):
    rng = np.random.default_rng(seed)
    k = np.concatenate([[1.0], rng.uniform(-0.1, 0.1, 3)])
    chains = [rng.uniform(0, 100, (int(rng.integers(2, 20)), 2)) for _ in range(3)]
    assert energy_E(k, chains, (50.0, 50.0), 70.0) >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_E_zero_iff_collinear(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 100, 2), rng.uniform(0, 100, 2)
    line = a + rng.uniform(0, 1, (30, 1)) * (b - a)
    e0 = energy_E((1.0,), [line], (0.0, 0.0), 100.0)
    scale = np.sum((line - line.mean(axis=0)) ** 2, axis=1).mean()
    assert e0 <= 1e-12 * scale ** 2
    bent = line.copy()
    bent[0] += 0.1 * np.array([-(b - a)[1], (b - a)[0]]) / np.hypot(*(b - a))
    assert energy_E((1.0,), [bent], (0.0, 0.0), 100.0) > 1e-12 * scale ** 2


# ---------------------------------------------------------------------
# alternating E minimization
# ---------------------------------------------------------------------
def test_E_alternating_straight(straight):
    res = minimize_E_alternating(problem(straight, 3))
    assert res.model.k == (1.0, 0.0, 0.0, 0.0)
    assert res.energy_E <= 1e-12


def test_E_alternating_order2(chains2):
    res = minimize_E_alternating(problem(chains2, 2))
    assert corrected_rms(res.model, chains2) <= 1e-3
    assert res.energy_final <= res.energy_initial


def test_E_alternating_history_monotone(chains4):
    res = minimize_E_alternating(problem(chains4, 4), max_sweeps=20)
    h = np.asarray(res.history)
    assert np.all(np.diff(h) <= 1e-9 * h[:-1])


def test_E_alternating_nelder_mead_order2(chains2):
    res = minimize_E_alternating(problem(chains2, 2), pair_solver="nelder-mead")
    assert corrected_rms(res.model, chains2) <= 1e-3


def test_E_alternating_needs_fixed_center(chains2):
    with pytest.raises(ValueError):
        minimize_E_alternating(problem(chains2, 2, "free"))


def test_E_vs_D_comparison():
    # with sub-pixel localization noise both estimators land on the noise floor
    chains = oracle_chains(model_k4(k=K4), noise=0.05, seed=3)
    d_D = corrected_rms(minimize_D(problem(chains, 4)).model, chains)
    d_E = corrected_rms(minimize_E_alternating(problem(chains, 4)).model, chains)
    assert d_E <= 2.0 * d_D


def test_E_alternating_deterministic(chains2):
    a = minimize_E_alternating(problem(chains2, 2))
    b = minimize_E_alternating(problem(chains2, 2))
    assert a.model.k == b.model.k and a.history == b.history


@pytest.mark.xfail(strict=True, reason="noise-free: D reaches round-off while the alternating "
                   "scheme is still at ~1e-4 px when the sweep cap stops it")
def test_E_vs_D_comparison_noise_free(chains4):
    d_D = corrected_rms(minimize_D(problem(chains4, 4)).model, chains4)
    d_E = corrected_rms(minimize_E_alternating(problem(chains4, 4)).model, chains4)
    assert d_E <= 2.0 * d_D
