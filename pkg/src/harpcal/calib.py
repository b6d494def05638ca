"""Plumb-line estimation of the radial correction.

Two estimators are provided:

* :func:`minimize_D` -- Levenberg-Marquardt on the mean per-line mean squared
  distance of corrected points to their regression lines (``k_0`` fixed to 1,
  center optionally free);
* :func:`minimize_E_alternating` -- an algebraic energy
  (mean per-line covariance determinant), minimized two coefficients at a
  time with a zoom update of the whole coefficient vector after each pair.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateError, InvertibilityError, NumericalError
from .model import DistortionModel, corner_radius, half_diagonal, image_center

log = logging.getLogger(__name__)

FD_STEP = 1e-6
LM_MAX_ITER = 500
LM_REL_TOL = 1e-12
LM_GRAD_TOL = 1e-10
E_MAX_SWEEPS = 100
E_REL_TOL = 1e-12


# ---------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------
@dataclass
class CalibrationProblem:
    chains: list
    model_order: int
    center_mode: str = "fixed"
    image_size: tuple = (0, 0)
    center: Optional[tuple] = None
    radius_scale: Optional[float] = None

    def __post_init__(self):
        items = []
        for i, c in enumerate(self.chains):
            if isinstance(c, tuple) and len(c) == 2 and isinstance(c[0], str):
                cid, pts = c
            else:
                cid, pts = str(i), c
            items.append((cid, np.asarray(pts, dtype=np.float64).reshape(-1, 2)))
        self.chains = items
        if self.model_order < 0:
            raise ValueError("model order must be >= 0")
        if self.center_mode not in ("fixed", "free"):
            raise ValueError(f"center mode must be 'fixed' or 'free', got {self.center_mode!r}")
        w, h = self.image_size
        if self.center is None:
            self.center = image_center(w, h)
        if self.radius_scale is None:
            self.radius_scale = half_diagonal(w, h)
        need = 2 * (self.model_order + 1)
        for cid, pts in self.chains:
            if len(pts) < need:
                raise DegenerateError(f"chain {cid}: {len(pts)} points, need at least {need}")
        self.orientation_warning = self._check_orientations()
        if self.orientation_warning:
            warnings.warn(self.orientation_warning)

    def _check_orientations(self) -> str:
        if len(self.chains) < 3:
            return f"only {len(self.chains)} chains; at least 3 recommended"
        angles = []
        for _, pts in self.chains:
            d = pts[-1] - pts[0]
            angles.append(math.atan2(d[1], d[0]) % math.pi)
        bins = {int(round(a / math.radians(10))) % 18 for a in angles}
        if len(bins) < 3:
            return "chains span fewer than 3 distinct orientations; center and model may be poorly constrained"
        return ""

    @property
    def max_radius(self) -> float:
        w, h = self.image_size
        if w and h:
            return corner_radius(self.center, w, h)
        c = np.asarray(self.center)
        return float(max(np.max(np.hypot(*(p - c).T)) for _, p in self.chains))


@dataclass
class CalibrationResult:
    model: DistortionModel
    energy_initial: float
    energy_final: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    method: str = "D"
    energy_E: Optional[float] = None

    def log_text(self) -> str:
        rows = [f"# method {self.method}", f"# energy_initial {self.energy_initial:.17g}",
                f"# energy_final {self.energy_final:.17g}",
                f"# iterations {self.iterations}", f"# converged {int(self.converged)}"]
        rows += [f"iter {i} energy {e:.17g}" for i, e in enumerate(self.history)]
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------
# vectorized per-chain line fits
# ---------------------------------------------------------------------
class _Stacked:
    """All chains concatenated with per-point chain index."""

    def __init__(self, chains):
        pts = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for _, p in chains]
        self.ids = [cid for cid, _ in chains]
        self.counts = np.array([len(p) for p in pts])
        self.seg = np.repeat(np.arange(len(pts)), self.counts)
        self.pts = np.vstack(pts) if pts else np.zeros((0, 2))
        self.L = len(pts)

    def chain_sum(self, v):
        return np.bincount(self.seg, weights=v, minlength=self.L)

    def moments(self, pts):
        n = self.counts
        mx = self.chain_sum(pts[:, 0]) / n
        my = self.chain_sum(pts[:, 1]) / n
        dx = pts[:, 0] - mx[self.seg]
        dy = pts[:, 1] - my[self.seg]
        vxx = self.chain_sum(dx * dx) / n
        vxy = self.chain_sum(dx * dy) / n
        vyy = self.chain_sum(dy * dy) / n
        return dx, dy, vxx, vxy, vyy

    def principal_frame(self, pts):
        """Per-point coordinates along and across each chain's regression line."""
        dx, dy, vxx, vxy, vyy = self.moments(pts)
        t0 = 0.5 * np.arctan2(-2.0 * vxy, vxx - vyy)
        t1 = t0 + 0.5 * np.pi

        def spread(t):
            s, c = np.sin(t), np.cos(t)
            return s * s * vxx + 2 * s * c * vxy + c * c * vyy

        theta = np.where(spread(t0) <= spread(t1), t0, t1)
        norm = np.hypot(np.sin(theta), np.cos(theta))
        alpha, beta = (np.sin(theta) / norm)[self.seg], (np.cos(theta) / norm)[self.seg]
        return beta * dx - alpha * dy, alpha * dx + beta * dy

    def signed_distances(self, pts):
        return self.principal_frame(pts)[1]

    def covariance_det(self, pts):
        """Covariance determinant per chain, evaluated in the principal frame.

        The direct ``vxx * vyy - vxy^2`` cancels catastrophically for nearly
        collinear chains; in the rotated frame the cross term vanishes and the
        small variance comes straight from the across-line offsets.
        """
        u, v = self.principal_frame(pts)
        n = self.counts
        vuu = self.chain_sum(u * u) / n
        vvv = self.chain_sum(v * v) / n
        vuv = self.chain_sum(u * v) / n
        return vuu * vvv - vuv * vuv


def _correct(pts, k, center, r0):
    d = pts - center
    rho = np.hypot(d[:, 0], d[:, 1]) / r0
    f = np.full_like(rho, k[-1])
    for c in k[-2::-1]:
        f = f * rho + c
    return center + f[:, None] * d


def _chain_list(chains):
    if isinstance(chains, CalibrationProblem):
        return chains.chains
    out = []
    for i, c in enumerate(chains):
        if isinstance(c, tuple) and len(c) == 2 and isinstance(c[0], str):
            out.append((c[0], np.asarray(c[1], dtype=np.float64)))
        else:
            out.append((str(i), np.asarray(c, dtype=np.float64)))
    return out


# ---------------------------------------------------------------------
# energy D
# ---------------------------------------------------------------------
def energy_D(model: DistortionModel, chains) -> float:
    """``(1/L) sum_l (1/N_l) sum_i S_li^2`` on the corrected points."""
    st = _Stacked(_chain_list(chains))
    if st.L == 0:
        return 0.0
    pts = _correct(st.pts, np.asarray(model.k), np.asarray(model.center), model.radius_scale)
    _, _, vxx, _, vyy = st.moments(pts)
    bad = np.flatnonzero(~(vxx + vyy > 0))
    if bad.size:
        raise DegenerateError(f"chain {st.ids[bad[0]]}: corrected points coincide")
    s = st.signed_distances(pts)
    return float(np.mean(st.chain_sum(s * s) / st.counts))


class _DObjective:
    def __init__(self, problem: CalibrationProblem):
        self.problem = problem
        self.st = _Stacked(problem.chains)
        self.r0 = problem.radius_scale
        self.N = problem.model_order
        self.free = problem.center_mode == "free"
        self.weights = 1.0 / np.sqrt(self.st.L * self.st.counts[self.st.seg])

    def unpack(self, q):
        k = np.concatenate([[1.0], q[:self.N]])
        if self.free:
            center = np.asarray(q[self.N:self.N + 2]) * self.r0
        else:
            center = np.asarray(self.problem.center, dtype=np.float64)
        return k, center

    def pack(self, model: DistortionModel):
        k = np.asarray(model.k, dtype=np.float64)
        if k[0] != 1.0:
            k = k / k[0]
        q = list(k[1:self.N + 1]) + [0.0] * max(0, self.N - (len(k) - 1))
        if self.free:
            q += [model.center[0] / self.r0, model.center[1] / self.r0]
        return np.asarray(q, dtype=np.float64)

    def residuals(self, q):
        k, center = self.unpack(q)
        pts = _correct(self.st.pts, k, center, self.r0)
        return self.st.signed_distances(pts) * self.weights

    def model(self, q, validate_radius=None) -> DistortionModel:
        k, center = self.unpack(q)
        return DistortionModel(tuple(center), tuple(k), self.r0,
                               max_radius=validate_radius)

    def admissible(self, q) -> bool:
        k, center = self.unpack(q)
        try:
            DistortionModel(tuple(center), tuple(k), self.r0, max_radius=self.max_radius(center))
        except (InvertibilityError, ValueError):
            return False
        return True

    def max_radius(self, center):
        w, h = self.problem.image_size
        if w and h:
            return corner_radius(center, w, h)
        return float(np.max(np.hypot(*(self.st.pts - center).T)))


def _fd_jacobian(fun, q, r):
    J = np.empty((len(r), len(q)))
    for j in range(len(q)):
        qq = q.copy()
        qq[j] += FD_STEP
        J[:, j] = (fun(qq) - r) / FD_STEP
    return J


def minimize_D(problem: CalibrationProblem, init: Optional[DistortionModel] = None,
               max_iter: int = LM_MAX_ITER) -> CalibrationResult:
    """Levenberg-Marquardt over ``k_1..k_N`` (and the center when free).

    Residuals are the signed distances scaled by ``1/sqrt(L N_l)`` so that
    their sum of squares is the energy D. The Jacobian is taken by forward
    differences with a step of ``1e-6`` in normalized parameter units. A trial
    step is accepted only when it lowers the energy and keeps the radial
    map invertible over the image, so the energy history is non-increasing.
    """
    obj = _DObjective(problem)
    if init is None:
        init = DistortionModel(problem.center, (1.0,) + (0.0,) * problem.model_order,
                               problem.radius_scale, max_radius=problem.max_radius)
    q = obj.pack(init)
    r = obj.residuals(q)
    energy = float(r @ r)
    if not math.isfinite(energy):
        raise NumericalError("initial energy is not finite", state=q)
    e0 = energy
    history = [energy]
    mu = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _fd_jacobian(obj.residuals, q, r)
        g = J.T @ r
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient", state=obj.model(q))
        if np.max(np.abs(g)) < LM_GRAD_TOL:
            converged = True
            break
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-30)
        if mu is None:
            mu = 1e-3
        accepted = False
        while mu < 1e16:
            try:
                delta = np.linalg.solve(A + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            q_new = q + delta
            r_new = obj.residuals(q_new)
            e_new = float(r_new @ r_new)
            if not math.isfinite(e_new):
                if not np.all(np.isfinite(q_new)):
                    raise NumericalError("non-finite parameters", state=obj.model(q))
                mu *= 10.0
                continue
            if e_new < energy and obj.admissible(q_new):
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            converged = True
            break
        rel = (energy - e_new) / energy if energy > 0 else 0.0
        q, r, energy = q_new, r_new, e_new
        history.append(energy)
        mu = max(mu / 10.0, 1e-12)
        if rel < LM_REL_TOL or energy == 0.0:
            converged = True
            break
    k, center = obj.unpack(q)
    model = DistortionModel(tuple(center), tuple(k), problem.radius_scale,
                            max_radius=obj.max_radius(center))
    log.debug("minimize_D: %d iterations, energy %.3g -> %.3g", it, e0, energy)
    return CalibrationResult(model, e0, energy, it, converged, history, "D")


# ---------------------------------------------------------------------
# energy E
# ---------------------------------------------------------------------
def energy_E(k, chains, center, radius_scale: float) -> float:
    """Mean over lines of the determinant of the corrected points' covariance."""
    st = _Stacked(_chain_list(chains))
    if st.L == 0:
        return 0.0
    pts = _correct(st.pts, np.asarray(k, dtype=np.float64), np.asarray(center, dtype=np.float64),
                   radius_scale)
    return float(np.mean(st.covariance_det(pts)))


def build_ABC(chains, center, order: int, radius_scale: float, align: bool = False):
    """Per-chain ``(A, B, C)`` moment matrices of size ``(order+1)^2``.

    Entry ``(m, n)`` is the covariance of ``rho^m x`` with ``rho^n x``
    (``A``), of the ``y`` analogues (``B``) and of ``rho^m x`` with
    ``rho^n y`` (``C``), where ``x, y`` are taken relative to ``center`` and
    ``rho`` is the radius divided by ``radius_scale``.

    With ``align=True`` each chain is first rotated about ``center`` so that
    its principal axis is horizontal. E is unchanged by that rotation but the
    products ``kAk * kBk`` and ``(kCk)^2`` no longer cancel catastrophically.
    """
    c = np.asarray(center, dtype=np.float64)
    out = []
    for _, pts in _chain_list(chains):
        d = np.asarray(pts, dtype=np.float64).reshape(-1, 2) - c
        if align and len(d) > 1:
            dc = d - d.mean(axis=0)
            vxx, vxy, vyy = np.mean(dc[:, 0] ** 2), np.mean(dc[:, 0] * dc[:, 1]), np.mean(dc[:, 1] ** 2)
            phi = 0.5 * math.atan2(2.0 * vxy, vxx - vyy)
            cs, sn = math.cos(phi), math.sin(phi)
            d = np.column_stack([cs * d[:, 0] + sn * d[:, 1], -sn * d[:, 0] + cs * d[:, 1]])
        rho = np.hypot(d[:, 0], d[:, 1]) / radius_scale
        powers = rho[:, None] ** np.arange(order + 1)[None, :]
        X = powers * d[:, 0:1]
        Y = powers * d[:, 1:2]
        X = X - X.mean(axis=0)
        Y = Y - Y.mean(axis=0)
        n = len(d)
        out.append((X.T @ X / n, Y.T @ Y / n, X.T @ Y / n))
    return out


def _stack_abc(abc):
    if isinstance(abc, tuple) and len(abc) == 3 and isinstance(abc[0], np.ndarray) and abc[0].ndim == 3:
        return abc
    if not abc:
        return np.zeros((0, 1, 1)), np.zeros((0, 1, 1)), np.zeros((0, 1, 1))
    return tuple(np.stack([m[i] for m in abc]) for i in range(3))


def energy_E_matrix(k, abc) -> float:
    """Energy E from precomputed matrices: mean of kAk * kBk - (kCk)^2.

    ``abc`` is the list returned by :func:`build_ABC` or the three stacked
    ``(L, n, n)`` arrays.
    """
    A, B, C = _stack_abc(abc)
    if len(A) == 0:
        return 0.0
    k = np.asarray(k, dtype=np.float64)
    ka, kb, kc = A @ k @ k, B @ k @ k, C @ k @ k
    return float(np.mean(ka * kb - kc * kc))


def _roundoff_floor(k, abc, extent: float = 0.0) -> float:
    """Magnitude of floating-point noise in :func:`energy_E_matrix`.

    ``extent`` is the largest point distance from the center; rounding the
    coordinates themselves leaves an across-line variance of about
    ``(eps * extent)^2`` even on exactly straight chains.
    """
    A, B, C = _stack_abc(abc)
    if not len(A):
        return 0.0
    eps = np.finfo(float).eps
    ka = np.abs(np.asarray(k, dtype=np.float64))
    a, b, c = np.abs(A) @ ka @ ka, np.abs(B) @ ka @ ka, np.abs(C) @ ka @ ka
    coord = (eps * extent * np.sum(ka)) ** 2 * (a + b)
    return 64.0 * float(np.mean(eps * (a * b + c * c) + coord))


def _energy_derivatives(k, abc):
    """Value, gradient and Hessian of E with respect to the full ``k``."""
    A, B, C = abc
    Cs = C + np.transpose(C, (0, 2, 1))
    Ak, Bk, Ck = A @ k, B @ k, Cs @ k
    a, b, c = Ak @ k, Bk @ k, 0.5 * (Ck @ k)
    L = len(A)
    val = np.mean(a * b - c * c)
    grad = (2 * (Ak * b[:, None] + Bk * a[:, None]) - 2 * Ck * c[:, None]).sum(axis=0) / L
    hess = (2 * (A * b[:, None, None] + B * a[:, None, None]) - 2 * Cs * c[:, None, None]
            + 4 * (np.einsum("li,lj->lij", Ak, Bk) + np.einsum("li,lj->lij", Bk, Ak))
            - 2 * np.einsum("li,lj->lij", Ck, Ck)).sum(axis=0) / L
    return float(val), grad, hess


def _minimize_pair(k, idx, abc, max_iter: int = 100):
    """Minimize E over ``k[idx]`` with the other coefficients held.

    Damped Newton on the quartic: a step is kept only if it lowers E, and
    the damping grows until one does, so the energy never increases.
    """
    k = k.copy()
    e, g, H = _energy_derivatives(k, abc)
    lam = 1e-6
    for _ in range(max_iter):
        gi = g[idx]
        Hi = H[np.ix_(idx, idx)]
        scale = max(np.max(np.abs(np.diag(Hi))), 1e-300)
        improved = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(Hi + lam * scale * np.eye(len(idx)), -gi)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = k.copy()
            trial[idx] += step
            e_new = energy_E_matrix(trial, abc)
            if e_new < e:
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        small = np.max(np.abs(step)) <= 1e-15 * max(1.0, np.max(np.abs(k)))
        rel = (e - e_new) / e if e > 0 else 0.0
        k = trial
        e, g, H = _energy_derivatives(k, abc)
        lam = max(lam / 100.0, 1e-12)
        if small or rel < 1e-15:
            break
    return k


def _minimize_pair_nm(k, idx, abc):
    """Nelder-Mead over ``k[idx]``; kept only if it lowers E."""
    def fun(v):
        kk = k.copy()
        kk[idx] = v
        return energy_E_matrix(kk, abc)

    x0 = k[idx].copy()
    f0 = fun(x0)
    simplex = np.vstack([x0] + [x0 + 1e-3 * e for e in np.eye(len(idx))])
    res = minimize(fun, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-14,
                            "fatol": 1e-14 * max(f0, 1e-300), "maxiter": 4000, "maxfev": 8000})
    out = k.copy()
    if res.fun < f0:
        out[idx] = res.x
    return out


PAIR_SOLVERS = {"newton": _minimize_pair, "nelder-mead": _minimize_pair_nm}


def _zoom_factor(st: _Stacked, k, center, r0) -> float:
    """Scale ``s`` minimizing sum |p_d - c - s (p_u - c)|^2."""
    d = st.pts - center
    rho = np.hypot(d[:, 0], d[:, 1]) / r0
    f = np.full_like(rho, k[-1])
    for c in k[-2::-1]:
        f = f * rho + c
    r2 = np.sum(d * d, axis=1)
    return float(np.sum(f * r2) / np.sum(f * f * r2))


def minimize_E_alternating(problem: CalibrationProblem, max_sweeps: int = E_MAX_SWEEPS,
                           pair_solver: str = "newton") -> CalibrationResult:
    """Alternating two-coefficient minimization of E with zoom updates.

    Starting from ``k = (1, 0, ..., 0)``, each sweep visits every pair
    ``(p, q)`` with ``1 <= p < q <= N`` (a single coefficient when N = 1),
    minimizes E over that pair (damped Newton on the quartic by default,
    or Nelder-Mead) while the others are held,
    then rescales the whole vector by the zoom factor that brings corrected
    points closest to the distorted ones. E scales as ``k_0^4`` under the
    zoom, so convergence is judged on ``E / k_0^4``.
    """
    if problem.center_mode != "fixed":
        raise ValueError("the alternating E scheme works with a fixed center")
    try:
        solve_pair = PAIR_SOLVERS[pair_solver]
    except KeyError:
        raise ValueError(f"pair_solver must be one of {sorted(PAIR_SOLVERS)}") from None
    N = problem.model_order
    center = np.asarray(problem.center, dtype=np.float64)
    r0 = problem.radius_scale
    abc = _stack_abc(build_ABC(problem.chains, center, N, r0, align=True))
    st = _Stacked(problem.chains)
    k = np.zeros(N + 1)
    k[0] = 1.0

    def gauge_free(kv):
        return energy_E_matrix(kv, abc) / kv[0] ** 4

    extent = float(np.max(np.hypot(*(st.pts - center).T))) if len(st.pts) else 0.0
    e_start = gauge_free(k)
    history = [e_start]
    if N == 0 or e_start <= _roundoff_floor(k, abc, extent):
        # already straight to working precision
        model = DistortionModel(tuple(center), tuple(k), r0, max_radius=problem.max_radius)
        d0 = energy_D(model, problem.chains)
        return CalibrationResult(model, d0, d0, 0, True, history, "E",
                                 energy_E(k, problem.chains, center, r0))
    pairs = [(1,)] if N == 1 else list(itertools.combinations(range(1, N + 1), 2))
    e_prev = e_start
    converged = False
    sweep = 0
    d_initial = energy_D(DistortionModel(tuple(center), tuple(k), r0, max_radius=problem.max_radius),
                         problem.chains)
    for sweep in range(1, max_sweeps + 1):
        for idx in pairs:
            idx = list(idx)

            k = solve_pair(k, idx, abc)
            k = k * _zoom_factor(st, k, center, r0)
        e_now = gauge_free(k)
        history.append(e_now)
        floor = _roundoff_floor(k, abc, extent) / k[0] ** 4
        if e_now > e_prev * (1 + 1e-9) + floor:
            raise RuntimeError(f"energy E increased during sweep {sweep}: {e_prev} -> {e_now}")
        rel = (e_prev - e_now) / e_prev if e_prev > 0 else 0.0
        stalled = e_prev - e_now <= floor
        e_prev = min(e_prev, e_now)
        if e_now == 0.0 or rel < E_REL_TOL or stalled:
            converged = True
            break
    model = DistortionModel(tuple(center), tuple(k), r0, max_radius=problem.max_radius)
    d_final = energy_D(model, problem.chains)
    e_final = energy_E(k, problem.chains, center, r0) / k[0] ** 4
    return CalibrationResult(model, d_initial, d_final, sweep, converged, history, "E", e_final)
