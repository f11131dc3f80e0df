"""Linear system ``A psi = b`` built from cross-multiplied DOA equations.

The unknown vector is ordered ``[r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .measurement import DoaMeasurement, MeasurementSet

log = logging.getLogger(__name__)

RANK_EPS = 1e-10
# below this |sin(phi)| the two retained equations lose most of their information
LOW_ELEVATION_WARN = 1e-3


class NongenericTrajectoryError(np.linalg.LinAlgError):
    """Coefficient matrix lacks full column rank."""

    def __init__(self, rank: int, condition_number: float, singular_values: np.ndarray):
        self.rank = rank
        self.condition_number = condition_number
        self.singular_values = singular_values
        super().__init__(
            f"nongeneric trajectory: rank(A) = {rank} < 12 "
            f"(condition number {condition_number:.3g})"
        )


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    b: np.ndarray
    scale: float = 1.0

    @property
    def K(self) -> int:
        return self.A.shape[0] // 2


@dataclass(frozen=True)
class RankDiagnostics:
    rank: int
    condition_number: float
    singular_values: np.ndarray


def rows_for_measurement(m: DoaMeasurement):
    """Return ``(row_xz, b_xz, row_yz, b_yz)`` for one measurement."""
    theta, phi = m.doa
    sp = np.sin(phi)
    cx = np.cos(theta) * np.cos(phi)
    cy = np.sin(theta) * np.cos(phi)
    pa = np.asarray(m.pos_a_global)
    x, y, z = m.pos_b_ins
    if abs(sp) < LOW_ELEVATION_WARN:
        log.warning("measurement k=%d has near-zero elevation (sin(phi)=%.2e); "
                    "its equations are poorly conditioned", m.k, sp)

    row_xz = np.zeros(12)
    row_xz[0:3] = pa * sp
    row_xz[6:9] = -pa * cx
    row_xz[9] = sp
    row_xz[11] = -cx

    row_yz = np.zeros(12)
    row_yz[3:6] = pa * sp
    row_yz[6:9] = -pa * cy
    row_yz[10] = sp
    row_yz[11] = -cy

    return row_xz, x * sp - z * cx, row_yz, y * sp - z * cy


def assemble(ms: MeasurementSet, scale: float = 1.0) -> LinearSystem:
    """Stack two rows per measurement; translation columns are multiplied by ``scale``
    so that the corresponding solved variables are ``t / scale``."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    A = np.empty((2 * len(ms), 12))
    b = np.empty(2 * len(ms))
    for i, m in enumerate(ms):
        A[2 * i], b[2 * i], A[2 * i + 1], b[2 * i + 1] = rows_for_measurement(m)
    A[:, 9:] *= scale
    return LinearSystem(A, b, float(scale))


def rank_diagnostics(ls: LinearSystem, eps: float = RANK_EPS) -> RankDiagnostics:
    A = ls.A
    sv = np.linalg.svd(A, compute_uv=False)
    full = np.zeros(12)
    full[: sv.size] = sv
    smax = full[0]
    tol = eps * smax * max(A.shape[0], 12)
    rank = int(np.sum(full > tol)) if smax > 0 else 0
    cond = float(smax / full[-1]) if full[-1] > 0 else float("inf")
    return RankDiagnostics(rank, cond, full)


def denormalise(psi_scaled: np.ndarray, scale: float) -> np.ndarray:
    psi = np.array(psi_scaled, dtype=float)
    psi[9:12] *= scale
    return psi


def solve_least_squares(ls: LinearSystem, eps: float = RANK_EPS) -> np.ndarray:
    """Unconstrained least-squares ``psi`` (translation in metres) via QR."""
    diag = rank_diagnostics(ls, eps)
    if diag.rank < 12:
        raise NongenericTrajectoryError(diag.rank, diag.condition_number, diag.singular_values)
    Q, R = np.linalg.qr(ls.A)
    psi = scipy.linalg.solve_triangular(R, Q.T @ ls.b)
    return denormalise(psi, ls.scale)


def solve_noiseless(ls: LinearSystem, eps: float = RANK_EPS) -> np.ndarray:
    """Exact solve for consistent noiseless data (same path as least squares)."""
    return solve_least_squares(ls, eps)


def psi_from_transform(rotation, translation, scale: float = 1.0) -> np.ndarray:
    psi = np.empty(12)
    psi[:9] = np.asarray(rotation, dtype=float).reshape(9)
    psi[9:] = np.asarray(translation, dtype=float) / scale
    return psi


def split_psi(psi) -> tuple[np.ndarray, np.ndarray]:
    psi = np.asarray(psi, dtype=float)
    return psi[:9].reshape(3, 3), psi[9:12].copy()
