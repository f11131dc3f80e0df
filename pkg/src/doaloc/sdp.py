"""Rank-relaxed semidefinite program for rotation-constrained least squares.

The lifted variable is the 13x13 matrix ``X = [psi; -1][psi; -1]^T``. The
quadratic objective ``||A psi - b||^2`` and the 21 rotation constraints on the
first nine entries of ``psi`` are linear in ``X``; dropping ``rank(X) = 1``
leaves a convex SDP, solved here by a small dense primal-dual interior-point
method (HKM search direction, Mehrotra predictor-corrector).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linear_system import LinearSystem, denormalise, split_psi
from .measurement import MeasurementSet

log = logging.getLogger(__name__)

N = 13
N_CONSTRAINTS = 21
POLISH_PATIENCE = 5
PRECONDITION_FLOOR = 1e-4


class SolverError(RuntimeError):
    """Interior-point iterations failed to meet the tolerance contract."""

    def __init__(self, msg: str, *, iterations: int = 0, residuals: dict | None = None):
        self.iterations = iterations
        self.residuals = residuals or {}
        detail = ", ".join(f"{k}={v:.3g}" for k, v in self.residuals.items())
        super().__init__(f"solver failed: {msg}" + (f" ({detail})" if detail else ""))


class InfeasibleError(SolverError):
    def __init__(self, msg: str = "infeasible", **kw):
        super().__init__(msg, **kw)


class DegenerateExtractionError(ValueError):
    def __init__(self, value: float):
        super().__init__(f"degenerate extraction: |u1[13]| = {value:.3g} < 1e-6")


@dataclass(frozen=True)
class ConstraintMatrix:
    Q: np.ndarray
    id: int


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    scale: float | None = None
    rank1_threshold: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> SolverOptions:
        unknown = set(d) - {"feas_tol", "gap_tol", "max_iter", "scale", "rank1_threshold"}
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SdpProblem:
    P: np.ndarray
    constraints: list[ConstraintMatrix]
    scale: float = 1.0


@dataclass(frozen=True)
class SdpSolution:
    X: np.ndarray
    objective: float
    rank1_ratio: float
    psi_hat: np.ndarray | None
    solver_iterations: int
    scale: float = 1.0
    residuals: dict = field(default_factory=dict)


# -- constraints ------------------------------------------------------------

def _idx(i: int, j: int) -> int:
    """Position of r_ij (0-based row/col) in psi."""
    return 3 * i + j


class _Quadratic:
    """Accumulates a quadratic polynomial in psi directly into its 13x13 matrix."""

    def __init__(self):
        self.Q = np.zeros((N, N))

    def prod(self, a: int, b: int, c: float = 1.0):
        self.Q[a, b] += c / 2
        self.Q[b, a] += c / 2

    def linear(self, a: int, c: float = 1.0):
        # X[a, 12] = -psi_a at rank one
        self.Q[a, 12] -= c / 2
        self.Q[12, a] -= c / 2

    def const(self, c: float):
        self.Q[12, 12] += c


def _cofactor_terms(i: int, j: int):
    """Cofactor (i, j) of R as [(coef, a, b), ...] over psi indices."""
    i1, i2 = (i + 1) % 3, (i + 2) % 3
    j1, j2 = (j + 1) % 3, (j + 2) % 3
    # cyclic index choice absorbs the (-1)^(i+j) sign for 3x3 matrices
    return [(1.0, _idx(i1, j1), _idx(i2, j2)), (-1.0, _idx(i1, j2), _idx(i2, j1))]


_PAIRS = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


def build_constraints() -> list[ConstraintMatrix]:
    """The 21 rotation constraints as matrices with ``<Q_i, X(psi)> = C_i(psi)``.

    1-6: entries (11, 22, 33, 12, 13, 23) of R R^T - I.
    7-12: the same entries of R^T R - I.
    13-21: columns 1, 2, 3 of Z = R - adj(R)^T, top to bottom.
    """
    out = []
    for transpose in (False, True):
        for p, q in _PAIRS:
            c = _Quadratic()
            for m in range(3):
                if transpose:
                    c.prod(_idx(m, p), _idx(m, q))
                else:
                    c.prod(_idx(p, m), _idx(q, m))
            if p == q:
                c.const(-1.0)
            out.append(c)
    for col in range(3):
        for row in range(3):
            c = _Quadratic()
            c.linear(_idx(row, col))
            # adj(R)^T[row, col] is the (row, col) cofactor
            for coef, a, b in _cofactor_terms(row, col):
                c.prod(a, b, -coef)
            out.append(c)
    return [ConstraintMatrix(c.Q, i + 1) for i, c in enumerate(out)]


def lift(psi) -> np.ndarray:
    v = np.append(np.asarray(psi, dtype=float), -1.0)
    return np.outer(v, v)


def default_scale(ms: MeasurementSet) -> float:
    """Translation normaliser: RMS spread of B's INS positions, at least 1 m."""
    pb = ms.pos_b
    rms = float(np.sqrt(np.mean(np.sum((pb - pb.mean(axis=0)) ** 2, axis=1))))
    return max(1.0, rms)


def build_problem(ls: LinearSystem) -> SdpProblem:
    Ab = np.column_stack([ls.A, ls.b])
    P = Ab.T @ Ab
    return SdpProblem(0.5 * (P + P.T), build_constraints(), ls.scale)


def constraint_residuals(psi) -> np.ndarray:
    """``C_i(psi)`` for i = 1..21; ``psi`` may be 9 or 12 long (translation unused)."""
    psi = np.asarray(psi, dtype=float).ravel()
    X = lift(np.concatenate([psi[:9], np.zeros(3)]))
    return np.array([np.vdot(c.Q, X) for c in build_constraints()])


# -- interior point ---------------------------------------------------------

def _reduce_constraints(As: np.ndarray, b: np.ndarray, tol: float = 1e-10):
    """Replace possibly dependent equalities with an orthonormal equivalent set."""
    m = As.shape[0]
    M = As.reshape(m, -1)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > tol * s[0]))
    Ur = U[:, :r]
    if np.linalg.norm(b - Ur @ (Ur.T @ b)) > 1e-8 * (1 + np.linalg.norm(b)):
        raise InfeasibleError("inconsistent equality constraints")
    bt = (Ur.T @ b) / s[:r]
    At = Vt[:r].reshape(r, *As.shape[1:])
    At = 0.5 * (At + At.transpose(0, 2, 1))
    return At, bt


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha dX still PSD (X assumed PD)."""
    L = np.linalg.cholesky(X)
    Li = scipy.linalg.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(Li @ dX @ Li.T)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _schur_solver(M: np.ndarray):
    # M loses rank near a rank-one X (more constraints than its tangent space)
    try:
        fac = scipy.linalg.cho_factor(M)
        return lambda r: scipy.linalg.cho_solve(fac, r)
    except np.linalg.LinAlgError:
        pinv = np.linalg.pinv(M, rcond=1e-14, hermitian=True)
        return lambda r: pinv @ r


def solve_sdp(C: np.ndarray, As: np.ndarray, b: np.ndarray, *, feas_tol: float = 1e-8,
              gap_tol: float = 1e-8, max_iter: int = 200, polish_tol: float | None = 1e-12):
    """min <C, X> s.t. <A_k, X> = b_k, X PSD.  Returns ``(X, y, S, iterations, residuals)``.

    ``As`` has shape ``(m, n, n)``; linearly dependent rows are tolerated.
    Once ``feas_tol``/``gap_tol`` are met, iterations continue towards
    ``polish_tol`` and the best iterate is returned when progress stalls.
    """
    n = C.shape[0]
    As0, b0 = As, b
    nb0 = np.linalg.norm(b0)
    As, b = _reduce_constraints(As, b)
    Aop = lambda Z: np.einsum("kab,ab->k", As, Z)
    Aadj = lambda y: np.einsum("k,kab->ab", y, As)
    nC = np.linalg.norm(C)
    polish_tol = min(feas_tol, gap_tol) if polish_tol is None else min(polish_tol, feas_tol, gap_tol)

    xi = max(1.0, np.sqrt(n) * np.max((1 + np.abs(b)) / (1 + np.linalg.norm(As, axis=(1, 2)))))
    X = xi * np.eye(n)
    S = max(1.0, np.sqrt(n), nC) * np.eye(n)
    y = np.zeros(len(b))
    best = None
    stalled = 0
    res = {}

    def converged(r, tol_p, tol_g):
        return (r["primal_infeasibility"] < tol_p and r["dual_infeasibility"] < tol_p
                and r["gap"] < tol_g)

    for it in range(max_iter + 1):
        rp = b - Aop(X)
        Rd = C - Aadj(y) - S
        pobj, dobj = float(np.vdot(C, X)), float(b @ y)
        mu = float(np.vdot(X, S)) / n
        # feasibility is judged on the constraints as given, not the reduced set
        rp0 = b0 - np.einsum("kab,ab->k", As0, X)
        res = {
            "primal_infeasibility": float(np.linalg.norm(rp0) / (1 + nb0)),
            "dual_infeasibility": float(np.linalg.norm(Rd) / (1 + nC)),
            "gap": abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj)),
        }
        if converged(res, feas_tol, gap_tol):
            if best is None or max(res.values()) < max(best[4].values()):
                best = (X, y, S, it, res)
                stalled = 0
            if converged(res, polish_tol, polish_tol):
                return best
        if best is not None:
            stalled += 1
            if stalled > POLISH_PATIENCE:
                return best
        if it == max_iter:
            break
        if np.linalg.norm(X) > 1e12 or np.linalg.norm(S) > 1e12:
            raise InfeasibleError("iterates diverged", iterations=it, residuals=res)

        try:
            Ls = np.linalg.cholesky(S)
            Lsi = scipy.linalg.solve_triangular(Ls, np.eye(n), lower=True)
            Sinv = Lsi.T @ Lsi
            Rx = np.linalg.cholesky(X)
            # M_kl = tr(A_k X A_l S^-1) as a Gram matrix, PSD by construction
            B = (Rx.T @ As @ Lsi.T).reshape(len(As), -1)
            M = B @ B.T
            msolve = _schur_solver(M)
            XRdS = X @ Rd @ Sinv

            def direction(Rc):
                dy = msolve(rp - Aop(Rc - XRdS))
                dS = Rd - Aadj(dy)
                dX = Rc - X @ dS @ Sinv
                dX = 0.5 * (dX + dX.T)
                # constraints are orthonormal: restore A(dX) = rp lost to the
                # ill-conditioned Schur solve
                dX += Aadj(rp - Aop(dX))
                return dX, dy, dS

            dXa, dya, dSa = direction(-X)
            ap = min(1.0, _max_step(X, dXa))
            ad = min(1.0, _max_step(S, dSa))
            mu_aff = float(np.vdot(X + ap * dXa, S + ad * dSa)) / n
            sigma = min(1.0, max(0.0, mu_aff / mu) ** 3)
            Rc = sigma * mu * Sinv - X - dXa @ dSa @ Sinv
            dX, dy, dS = direction(Rc)
            ap = min(1.0, 0.98 * _max_step(X, dX))
            ad = min(1.0, 0.98 * _max_step(S, dS))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            log.debug("breakdown at iteration %d: %s", it, e)
            if best is not None:
                return best
            raise SolverError(f"numerical breakdown ({e})", iterations=it, residuals=res) from e

        log.debug("it %2d pinf %.2e dinf %.2e gap %.2e mu %.2e step %.3f/%.3f sigma %.2e",
                  it, res["primal_infeasibility"], res["dual_infeasibility"], res["gap"],
                  mu, ap, ad, sigma)
        X = X + ap * dX
        y = y + ad * dy
        S = S + ad * dS
        X = 0.5 * (X + X.T)
        S = 0.5 * (S + S.T)

    if best is not None:
        return best
    raise SolverError(f"no convergence within {max_iter} iterations", iterations=max_iter, residuals=res)


def _congruence(P: np.ndarray, floor: float = PRECONDITION_FLOOR) -> np.ndarray:
    """Symmetric T with T P T close to a projector.

    Solving over ``X' = T^-1 X T^-1`` equalises the cost spectrum; without it
    the interior-point iterates stall long before the rank-one optimum is
    resolved to the accuracy the noiseless case admits.
    """
    lam, V = np.linalg.eigh(P)
    sv = np.sqrt(np.clip(lam, 0.0, None))
    top = sv[-1]
    if top == 0:
        return np.eye(P.shape[0])
    d = 1.0 / np.maximum(sv, floor * top)
    d /= d.min()
    return (V * d) @ V.T


def solve_relaxed(p: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve the SDP without the rank-one constraint and extract ``psi_hat``."""
    opts = opts or SolverOptions()
    E = np.zeros((N, N))
    E[12, 12] = 1.0
    As = np.stack([E] + [c.Q for c in p.constraints])
    b = np.zeros(len(As))
    b[0] = 1.0

    def attempt(Tm):
        C = Tm @ p.P @ Tm
        cn = np.linalg.norm(C)
        if cn > 0:
            C = C / cn
        Xs, _, _, iters, res = solve_sdp(C, Tm @ As @ Tm, b, feas_tol=opts.feas_tol,
                                         gap_tol=opts.gap_tol, max_iter=opts.max_iter)
        return Tm @ Xs @ Tm, iters, res

    try:
        X, iters, res = attempt(_congruence(p.P))
    except SolverError as e:
        log.debug("preconditioned solve failed (%s); retrying unpreconditioned", e)
        X, iters, res = attempt(np.eye(N))
    X = 0.5 * (X + X.T)

    sv = np.linalg.svd(X, compute_uv=False)
    ratio = float(sv[1] / sv[0]) if sv[0] > 0 else 0.0
    objective = max(0.0, float(np.vdot(p.P, X)))
    sol = SdpSolution(X, objective, ratio, None, iters, p.scale, res)
    psi_hat, _, _ = extract_rank1(sol)
    if ratio > opts.rank1_threshold:
        log.warning("SDP solution far from rank one: sigma2/sigma1 = %.3g", ratio)
    else:
        log.debug("SDP solved in %d iterations, sigma2/sigma1 = %.3g", iters, ratio)
    return SdpSolution(X, objective, ratio, psi_hat, iters, p.scale, res)


def extract_rank1(s: SdpSolution):
    """Best rank-one factor of X, normalised so its 13th entry is -1.

    Returns ``(psi_hat, r_hat, t_bar)`` with the translation in metres.
    """
    w, V = np.linalg.eigh(0.5 * (s.X + s.X.T))
    u = V[:, -1]
    if abs(u[12]) < 1e-6:
        raise DegenerateExtractionError(abs(u[12]))
    v = -u / u[12]
    psi_hat = denormalise(v[:12], s.scale)
    r_hat, t_bar = split_psi(psi_hat)
    return psi_hat, r_hat, t_bar
