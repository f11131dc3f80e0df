"""End-to-end estimators (SDP+O, LS+O, bearing-residual refinement) and error metrics."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .frames import FrameTransform, axis_angle_to_rotation, geodesic_distance, hat, wrap_angle
from .linear_system import (NongenericTrajectoryError, assemble, rank_diagnostics,
                            solve_least_squares, split_psi)
from .measurement import MeasurementSet
from .procrustes import nearest_rotation_flagged
from .sdp import SolverOptions, build_problem, default_scale, solve_relaxed

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    SDP_O = "SDP_O"
    LS_O = "LS_O"
    SDP_O_REFINED = "SDP_O_REFINED"


class InsufficientMeasurementsError(ValueError):
    def __init__(self, K: int, needed: int, method: str):
        super().__init__(f"insufficient measurements: {method} needs K >= {needed}, got {K}")
        self.K, self.needed = K, needed


@dataclass(frozen=True)
class EstimateReport:
    method: Method
    r_bar: np.ndarray
    t_bar: np.ndarray
    reconstructed_b_global: np.ndarray
    rotation_error: float | None = None
    position_error: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def transform(self) -> FrameTransform:
        return FrameTransform(self.r_bar, self.t_bar)

    def to_dict(self) -> dict:
        d = {
            "method": self.method.value,
            "r_bar": self.r_bar.tolist(),
            "t_bar": self.t_bar.tolist(),
            "reconstructed_b_global": self.reconstructed_b_global.tolist(),
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.rotation_error is not None:
            d["rotation_error_rad"] = self.rotation_error
        if self.position_error is not None:
            d["position_error_m"] = self.position_error
        return d


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


# -- metrics ----------------------------------------------------------------

def rotation_error(r_est, r_true) -> float:
    return geodesic_distance(r_est, r_true)


def reconstruct_b_global(ms: MeasurementSet, r, t) -> np.ndarray:
    """Global positions of B: ``R^T (p_B^ins - T)`` for every measurement."""
    return (ms.pos_b - np.asarray(t)) @ np.asarray(r)


def position_error(ms: MeasurementSet, r_est, t_est, truth: FrameTransform) -> float:
    est = reconstruct_b_global(ms, r_est, t_est)
    true = reconstruct_b_global(ms, truth.rotation, truth.translation)
    return float(np.mean(np.linalg.norm(est - true, axis=1)))


def _report(method, ms, r_bar, t_bar, truth, diagnostics) -> EstimateReport:
    rot_err = pos_err = None
    if truth is not None:
        rot_err = rotation_error(r_bar, truth.rotation)
        pos_err = position_error(ms, r_bar, t_bar, truth)
    return EstimateReport(Method(method), r_bar, np.asarray(t_bar, dtype=float),
                          reconstruct_b_global(ms, r_bar, t_bar), rot_err, pos_err, diagnostics)


def _check_rank(ls, K: int):
    diag = rank_diagnostics(ls)
    if diag.rank < min(2 * K, 12):
        raise NongenericTrajectoryError(diag.rank, diag.condition_number, diag.singular_values)
    return diag


# -- estimators -------------------------------------------------------------

def estimate_sdp_o(ms: MeasurementSet, opts: SolverOptions | None = None,
                   truth: FrameTransform | None = None) -> EstimateReport:
    """Relaxed SDP, rank-one extraction, then projection onto SO(3)."""
    opts = opts or SolverOptions()
    if ms.K < 4:
        raise InsufficientMeasurementsError(ms.K, 4, "SDP_O")
    scale = opts.scale or default_scale(ms)
    ls = assemble(ms, scale)
    diag = _check_rank(ls, ms.K)
    sol = solve_relaxed(build_problem(ls), opts)
    r_hat, t_bar = split_psi(sol.psi_hat)
    r_bar, nonunique = nearest_rotation_flagged(r_hat)
    return _report(Method.SDP_O, ms, r_bar, t_bar, truth, {
        "objective": sol.objective,
        "rank1_ratio": sol.rank1_ratio,
        "rank1_ok": sol.rank1_ratio <= opts.rank1_threshold,
        "rank": diag.rank,
        "condition_number": diag.condition_number,
        "solver_iterations": sol.solver_iterations,
        "scale": scale,
        "nonunique_projection": nonunique,
        "psi_hat": sol.psi_hat,
    })


def estimate_ls_o(ms: MeasurementSet, opts: SolverOptions | None = None,
                  truth: FrameTransform | None = None) -> EstimateReport:
    """Unconstrained least squares, then projection onto SO(3)."""
    opts = opts or SolverOptions()
    if ms.K < 6:
        raise InsufficientMeasurementsError(ms.K, 6, "LS_O")
    scale = opts.scale or default_scale(ms)
    ls = assemble(ms, scale)
    diag = rank_diagnostics(ls)
    psi = solve_least_squares(ls)
    r_hat, t_bar = split_psi(psi)
    r_bar, nonunique = nearest_rotation_flagged(r_hat)
    residual = float(np.linalg.norm(ls.A @ np.r_[psi[:9], psi[9:] / scale] - ls.b) ** 2)
    return _report(Method.LS_O, ms, r_bar, t_bar, truth, {
        "objective": residual,
        "rank": diag.rank,
        "condition_number": diag.condition_number,
        "scale": scale,
        "nonunique_projection": nonunique,
        "psi_hat": psi,
    })


# -- bearing-residual refinement --------------------------------------------

@dataclass(frozen=True)
class RefineOptions:
    max_iter: int = 2000
    grad_tol: float = 1e-10
    # stop once the cost falls by less than ftol (relative) over `window` steps
    ftol: float = 1e-9
    window: int = 10
    armijo: float = 1e-4
    translation_scale: float | None = None
    elevation_weight: float = 1.0


def predicted_angles(ms: MeasurementSet, r, t) -> np.ndarray:
    q = ms.pos_a @ np.asarray(r).T + np.asarray(t) - ms.pos_b
    return np.column_stack([np.arctan2(q[:, 1], q[:, 0]),
                            np.arctan2(q[:, 2], np.hypot(q[:, 0], q[:, 1]))])


def bearing_residuals(ms: MeasurementSet, r, t) -> np.ndarray:
    """``(K, 2)`` measured minus predicted angles, azimuth wrapped to (-pi, pi]."""
    e = ms.angles - predicted_angles(ms, r, t)
    e[:, 0] = wrap_angle(e[:, 0])
    return e


def bearing_cost(ms: MeasurementSet, r, t, elevation_weight: float = 1.0) -> float:
    e = bearing_residuals(ms, r, t)
    return float(np.sum(e[:, 0] ** 2) + elevation_weight * np.sum(e[:, 1] ** 2))


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < 1e-6:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    return (np.eye(3) + (1 - np.cos(th)) / th**2 * W
            + (th - np.sin(th)) / th**3 * (W @ W))


class BearingObjective:
    """Bearing cost over 6 local coordinates around ``(r0, t0)``.

    ``x = (w, d)`` maps to ``R = exp(hat(w)) r0`` and ``T = t0 + scale * d``.
    """

    def __init__(self, ms: MeasurementSet, r0, t0, scale: float = 1.0, elevation_weight: float = 1.0):
        self.ms = ms
        self.r0 = np.asarray(r0, dtype=float)
        self.t0 = np.asarray(t0, dtype=float)
        self.scale = float(scale)
        self.wel = float(elevation_weight)
        self._pa, self._pb, self._meas = ms.pos_a, ms.pos_b, ms.angles

    def transform(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return axis_angle_to_rotation(x[:3]) @ self.r0, self.t0 + self.scale * x[3:]

    def _residuals(self, r, t):
        rp = self._pa @ r.T
        q = rp + t - self._pb
        rho = np.hypot(q[:, 0], q[:, 1])
        e_th = wrap_angle(self._meas[:, 0] - np.arctan2(q[:, 1], q[:, 0]))
        e_ph = self._meas[:, 1] - np.arctan2(q[:, 2], rho)
        return rp, q, rho, e_th, e_ph

    def __call__(self, x) -> float:
        r, t = self.transform(x)
        _, _, _, e_th, e_ph = self._residuals(r, t)
        return float(np.sum(e_th**2) + self.wel * np.sum(e_ph**2))

    def value_and_grad(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        r, t = self.transform(x)
        rp, q, rho, e_th, e_ph = self._residuals(r, t)
        rho2 = rho**2
        n2 = rho2 + q[:, 2] ** 2
        f = float(np.sum(e_th**2) + self.wel * np.sum(e_ph**2))

        dth = np.column_stack([-q[:, 1] / rho2, q[:, 0] / rho2, np.zeros(len(q))])
        dph = np.column_stack([-q[:, 0] * q[:, 2] / (rho * n2),
                               -q[:, 1] * q[:, 2] / (rho * n2), rho / n2])
        # df/dq for every measurement
        g_q = -2.0 * (e_th[:, None] * dth + self.wel * e_ph[:, None] * dph)
        J = _left_jacobian(x[:3])
        # dq/dw = -hat(R p_A) J, and g^T hat(v) = (g x v)^T
        g_w = -np.cross(g_q, rp).sum(axis=0) @ J
        g_d = self.scale * g_q.sum(axis=0)
        return f, np.concatenate([g_w, g_d])


def refine_mle(ms: MeasurementSet, initial: EstimateReport, opts: RefineOptions | None = None,
               truth: FrameTransform | None = None) -> EstimateReport:
    """Gradient descent with Armijo backtracking on the bearing-residual cost."""
    opts = opts or RefineOptions()
    scale = opts.translation_scale or default_scale(ms)
    obj = BearingObjective(ms, initial.r_bar, initial.t_bar, scale, opts.elevation_weight)
    x = np.zeros(6)
    f, g = obj.value_and_grad(x)
    trace = [f]
    step = 1.0
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        gg = float(g @ g)
        if np.sqrt(gg) < opts.grad_tol:
            converged = True
            break
        while True:
            x_new = x - step * g
            f_new = obj(x_new)
            if f_new <= f - opts.armijo * step * gg:
                break
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            # no descent possible at working precision
            converged = True
            break
        x = x_new
        f, g = obj.value_and_grad(x)
        trace.append(f)
        step *= 2.0
        if len(trace) > opts.window:
            ref = trace[-1 - opts.window]
            if ref - f <= opts.ftol * max(ref, 1e-300):
                converged = True
                break
    if not converged:
        log.warning("refinement stopped after %d iterations without converging", opts.max_iter)
    r, t = obj.transform(x)
    diagnostics = dict(initial.diagnostics)
    diagnostics.update({
        "initial_cost": trace[0],
        "final_cost": trace[-1],
        "refine_iterations": len(trace) - 1,
        "refine_converged": converged,
        "cost_trace": trace,
    })
    return _report(Method.SDP_O_REFINED, ms, r, t, truth, diagnostics)


def estimate(ms: MeasurementSet, method: Method | str = Method.SDP_O,
             opts: SolverOptions | None = None, truth: FrameTransform | None = None) -> EstimateReport:
    method = Method(method)
    if method is Method.LS_O:
        return estimate_ls_o(ms, opts, truth)
    rep = estimate_sdp_o(ms, opts, truth)
    if method is Method.SDP_O_REFINED:
        rep = refine_mle(ms, rep, truth=truth)
    return rep
